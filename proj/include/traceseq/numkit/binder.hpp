#pragma once

#include <map>
#include <string>

#include "traceseq/numkit/param.hpp"
#include "traceseq/numkit/tape.hpp"

namespace traceseq::numkit {

// Places each parameter on the tape once, however often a model reads it.
class Binder {
 public:
  Binder(Tape& tape, ParameterSet& params) : tape_(tape), params_(params) {}

  Var operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    Var v = tape_.parameter(params_.at(name));
    bound_.emplace(name, v);
    return v;
  }
  bool has(const std::string& name) const { return params_.contains(name); }

  Tape& tape() { return tape_; }
  ParameterSet& params() { return params_; }

 private:
  Tape& tape_;
  ParameterSet& params_;
  std::map<std::string, Var> bound_;
};

}  // namespace traceseq::numkit
