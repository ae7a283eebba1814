#include "traceseq/numkit/adadelta.hpp"

#include <cmath>
#include <string>

#include "traceseq/errors.hpp"

namespace traceseq::numkit {

void adadelta_step(ParameterSet& params, const AdadeltaConfig& config) {
  if (!(config.rho > 0.0 && config.rho < 1.0)) {
    throw ConfigError("adadelta rho must lie in (0,1), got " + std::to_string(config.rho));
  }
  if (!(config.eps > 0.0)) throw ConfigError("adadelta eps must be positive");
  for (auto& [name, p] : params) {
    if (p.grad.shape() != p.value.shape()) throw ContractError("parameter '" + name + "' has no gradient");
  }
  const double rho = config.rho, eps = config.eps;
  for (auto& [_, p] : params) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      p.sq_grad_avg[i] = rho * p.sq_grad_avg[i] + (1.0 - rho) * g * g;
      const double dx = -std::sqrt(p.sq_update_avg[i] + eps) / std::sqrt(p.sq_grad_avg[i] + eps) * g;
      p.value[i] += config.lr * dx;
      p.sq_update_avg[i] = rho * p.sq_update_avg[i] + (1.0 - rho) * dx * dx;
    }
    p.grad.fill(0.0);
  }
}

}  // namespace traceseq::numkit
