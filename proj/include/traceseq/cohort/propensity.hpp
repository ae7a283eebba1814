#pragma once

#include <vector>

#include "traceseq/ehr/record.hpp"

namespace traceseq::cohort {

struct PropensityFit {
  std::vector<double> scores;  // in-sample probabilities, parallel to the input
  std::vector<double> weights;  // intercept first
  std::size_t steps = 0;
  double grad_norm = 0.0;
};

// Logistic regression of case status on (standardized age at last input
// visit, gender one-hot, race one-hot), fitted by full-batch gradient descent
// on mean BCE until the gradient norm drops below 1e-6 or 10^4 steps.
PropensityFit fit_propensity(const std::vector<ehr::RawPatient>& patients, std::size_t max_steps = 10000,
                             double tolerance = 1e-6);

}  // namespace traceseq::cohort
