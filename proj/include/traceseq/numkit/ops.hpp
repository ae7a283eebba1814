#pragma once

#include <string_view>
#include <vector>

#include "traceseq/numkit/rng.hpp"
#include "traceseq/numkit/tape.hpp"

// Differentiable operators. Each records its output on the tape of its first
// argument together with the adjoint rule.
namespace traceseq::numkit::ops {

enum class Activation { kSigmoid, kTanh, kRelu };
enum class LossKind { kCeSoftmax, kBce, kMse };

Activation parse_activation(std::string_view name);
LossKind parse_loss(std::string_view name);

inline constexpr double kProbClamp = 1e-12;
inline constexpr double kLayerNormEps = 1e-5;

// a: [m x k] or [k]; b: [k x n]. Result keeps a's rank.
Var matmul(Var a, Var b);
// a [m x k] times b[n x k] transposed.
Var matmul_nt(Var a, Var b);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double k);
Var one_minus(Var a);
// x: [r x c] or [c]; bias: [c], added to every row.
Var add_bias(Var x, Var bias);

Var activation(Activation kind, Var x);
inline Var sigmoid(Var x) { return activation(Activation::kSigmoid, x); }
inline Var tanh(Var x) { return activation(Activation::kTanh, x); }
inline Var relu(Var x) { return activation(Activation::kRelu, x); }

Var softmax_rows(Var x);
Var layer_norm_rows(Var x, Var gain, Var bias);
Var dropout(Var x, double rate, Mode mode, Rng& rng);

// Row i of w multiplied by x[i].
Var scale_rows(Var w, Var x);
// p * scale_rows(w, x) computed over the nonzero entries of x only.
Var project_scaled_rows(Var p, Var w, Var x);
Var mean_pool_rows(Var x);

Var concat(const std::vector<Var>& parts);
Var slice(Var x, std::size_t offset, std::size_t length);
Var stack_rows(const std::vector<Var>& rows);
Var reshape(Var x, Shape shape);
Var add_n(const std::vector<Var>& terms);

// Scalar loss against a constant target.
Var loss(LossKind kind, Var pred, const DenseArray& target);

}  // namespace traceseq::numkit::ops
