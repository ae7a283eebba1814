#pragma once

#include <map>
#include <string>
#include <vector>

#include "traceseq/numkit/dense_array.hpp"
#include "traceseq/numkit/rng.hpp"

namespace traceseq::numkit {

struct TrainableParam {
  TrainableParam(std::string name, DenseArray init);

  std::string name;
  DenseArray value;
  DenseArray grad;
  DenseArray sq_grad_avg;    // E[g^2]
  DenseArray sq_update_avg;  // E[dx^2]
};

// Named parameters, iterated in lexicographic name order. Element addresses
// are stable for the lifetime of the set.
class ParameterSet {
 public:
  using Map = std::map<std::string, TrainableParam>;

  TrainableParam& add(const std::string& name, DenseArray init);
  TrainableParam& at(const std::string& name);
  const TrainableParam& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }
  std::size_t element_count() const;
  std::vector<std::string> names() const;

  void zero_grad();
  // Copies values of every parameter present in both sets (same shapes).
  void copy_values_from(const ParameterSet& other);
  // Replaces optimizer-free state by a snapshot of values.
  ParameterSet snapshot() const;

  Map::iterator begin() { return params_.begin(); }
  Map::iterator end() { return params_.end(); }
  Map::const_iterator begin() const { return params_.begin(); }
  Map::const_iterator end() const { return params_.end(); }

 private:
  Map params_;
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
DenseArray glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace traceseq::numkit
