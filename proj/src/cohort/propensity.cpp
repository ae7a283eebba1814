#include "traceseq/cohort/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "traceseq/errors.hpp"

namespace traceseq::cohort {

PropensityFit fit_propensity(const std::vector<ehr::RawPatient>& patients, std::size_t max_steps, double tolerance) {
  std::size_t cases = 0;
  for (const auto& p : patients) {
    if (p.visits.empty()) throw ValidationError("patient " + p.id + " has no visits for the matching variables");
    cases += p.label == 1;
  }
  if (cases == 0 || cases == patients.size()) {
    throw ValidationError("propensity fit needs both cases and controls");
  }

  // Design matrix: intercept, standardized age, gender and race one-hots
  // without their first (reference) category.
  std::set<std::string> genders, races;
  for (const auto& p : patients) {
    genders.insert(p.gender);
    races.insert(p.race);
  }
  std::map<std::string, std::size_t> gender_col, race_col;
  std::size_t cols = 2;
  for (auto it = std::next(genders.begin()); it != genders.end(); ++it) gender_col[*it] = cols++;
  for (auto it = std::next(races.begin()); it != races.end(); ++it) race_col[*it] = cols++;

  const std::size_t n = patients.size();
  double mean_age = 0.0;
  for (const auto& p : patients) mean_age += p.visits.back().age_years;
  mean_age /= static_cast<double>(n);
  double var_age = 0.0;
  for (const auto& p : patients) var_age += std::pow(p.visits.back().age_years - mean_age, 2);
  const double sd_age = std::sqrt(var_age / static_cast<double>(n));

  std::vector<double> x(n * cols, 0.0), y(n);
  double max_norm2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = patients[i];
    double* row = &x[i * cols];
    row[0] = 1.0;
    row[1] = sd_age > 0.0 ? (p.visits.back().age_years - mean_age) / sd_age : 0.0;
    if (auto it = gender_col.find(p.gender); it != gender_col.end()) row[it->second] = 1.0;
    if (auto it = race_col.find(p.race); it != race_col.end()) row[it->second] = 1.0;
    y[i] = p.label;
    double norm2 = 0.0;
    for (std::size_t c = 0; c < cols; ++c) norm2 += row[c] * row[c];
    max_norm2 = std::max(max_norm2, norm2);
  }

  // Mean-BCE curvature is bounded by max_i |x_i|^2 / 4; step 1/L is stable.
  const double lr = 4.0 / max_norm2;
  PropensityFit fit;
  fit.weights.assign(cols, 0.0);
  std::vector<double> grad(cols), prob(n);
  auto predict = [&] {
    for (std::size_t i = 0; i < n; ++i) {
      double z = 0.0;
      for (std::size_t c = 0; c < cols; ++c) z += x[i * cols + c] * fit.weights[c];
      prob[i] = 1.0 / (1.0 + std::exp(-z));
    }
  };
  for (fit.steps = 0; fit.steps < max_steps; ++fit.steps) {
    predict();
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = prob[i] - y[i];
      for (std::size_t c = 0; c < cols; ++c) grad[c] += r * x[i * cols + c];
    }
    double norm2 = 0.0;
    for (auto& g : grad) {
      g /= static_cast<double>(n);
      norm2 += g * g;
    }
    fit.grad_norm = std::sqrt(norm2);
    if (fit.grad_norm < tolerance) break;
    for (std::size_t c = 0; c < cols; ++c) fit.weights[c] -= lr * grad[c];
  }
  predict();
  fit.scores = prob;
  return fit;
}

}  // namespace traceseq::cohort
