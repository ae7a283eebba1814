#include "traceseq/numkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "traceseq/errors.hpp"

namespace traceseq::numkit {

namespace {
double evaluate(const LossClosure& closure) {
  Tape tape;
  return closure(tape).item();
}
}  // namespace

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& p : params) m = std::max(m, p.max_rel_error);
  return m;
}

GradCheckReport finite_diff_check(const LossClosure& closure, ParameterSet& params, double h, double tolerance,
                                  std::size_t max_elements) {
  const double first = evaluate(closure);
  const double second = evaluate(closure);
  if (first != second) {
    throw ContractError("finite_diff_check: closure is not deterministic (" + std::to_string(first) + " vs " +
                        std::to_string(second) + ")");
  }

  params.zero_grad();
  {
    Tape tape;
    tape.backward(closure(tape));
  }

  GradCheckReport report;
  report.tolerance = tolerance;
  for (auto& [name, p] : params) {
    ParamCheck check;
    check.name = name;
    const std::size_t count = max_elements ? std::min(max_elements, p.value.size()) : p.value.size();
    for (std::size_t i = 0; i < count; ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double plus = evaluate(closure);
      p.value[i] = saved - h;
      const double minus = evaluate(closure);
      p.value[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double analytic = p.grad[i];
      const double err = relative_error(analytic, numeric);
      if (err > check.max_rel_error || i == 0) {
        check.worst_index = i;
        check.worst_analytic = analytic;
        check.worst_numeric = numeric;
      }
      check.max_rel_error = std::max(check.max_rel_error, err);
      check.max_abs_analytic = std::max(check.max_abs_analytic, std::abs(analytic));
    }
    check.elements = count;
    report.params.push_back(check);
  }
  params.zero_grad();
  return report;
}

}  // namespace traceseq::numkit
