#pragma once

#include <functional>
#include <string>
#include <vector>

#include "traceseq/numkit/param.hpp"
#include "traceseq/numkit/tape.hpp"

namespace traceseq::numkit {

// Builds a scalar loss on the given tape from the current parameter values.
// Must be deterministic: same values in, same loss out.
using LossClosure = std::function<Var(Tape&)>;

struct ParamCheck {
  std::string name;
  std::size_t elements = 0;
  double max_rel_error = 0.0;
  double max_abs_analytic = 0.0;
  // Element with the largest relative error.
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double tolerance = 0.0;

  double max_rel_error() const;
  bool passed() const { return max_rel_error() < tolerance; }
};

// |a - n| / max(1e-8, |a| + |n|)
double relative_error(double analytic, double numeric);

// Compares tape gradients with central differences for every element of every
// parameter (or the first max_elements of each, when nonzero).
GradCheckReport finite_diff_check(const LossClosure& closure, ParameterSet& params, double h = 1e-5,
                                  double tolerance = 1e-4, std::size_t max_elements = 0);

}  // namespace traceseq::numkit
