#pragma once

#include "traceseq/numkit/param.hpp"

namespace traceseq::numkit {

struct AdadeltaConfig {
  double rho = 0.95;
  double eps = 1e-6;
  double lr = 1.0;
};

// One Adadelta update over every parameter; gradients are zeroed afterwards.
//   E[g^2]  <- rho E[g^2] + (1 - rho) g^2
//   dx       = -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
//   x       <- x + lr * dx
//   E[dx^2] <- rho E[dx^2] + (1 - rho) dx^2
void adadelta_step(ParameterSet& params, const AdadeltaConfig& config);

}  // namespace traceseq::numkit
