#include "traceseq/numkit/gru.hpp"

#include "traceseq/errors.hpp"

namespace traceseq::numkit {

GruCell::GruCell(std::string prefix, std::size_t input_dim, std::size_t hidden_dim)
    : prefix_(std::move(prefix)), input_dim_(input_dim), hidden_dim_(hidden_dim) {}

void GruCell::init(ParameterSet& params, Rng& rng) const {
  params.add(prefix_ + ".w_in", glorot_uniform(input_dim_, 3 * hidden_dim_, rng));
  params.add(prefix_ + ".w_hid", glorot_uniform(hidden_dim_, 3 * hidden_dim_, rng));
  params.add(prefix_ + ".bias", DenseArray({3 * hidden_dim_}, 0.0));
}

GruCell::Bound GruCell::bind(Tape& tape, ParameterSet& params) const {
  return Bound{tape.parameter(params.at(prefix_ + ".w_in")), tape.parameter(params.at(prefix_ + ".w_hid")),
               tape.parameter(params.at(prefix_ + ".bias")), hidden_dim_};
}

GruCell::Bound GruCell::bind(Binder& binder) const {
  return Bound{binder(prefix_ + ".w_in"), binder(prefix_ + ".w_hid"), binder(prefix_ + ".bias"), hidden_dim_};
}

Var gru_step(const GruCell::Bound& cell, Var state, Var input) {
  using namespace ops;
  const std::size_t h = cell.hidden;
  if (state.value().shape() != Shape{h}) {
    throw DimensionError("gru_step: state " + shape_string(state.shape()) + " vs hidden size " + std::to_string(h));
  }
  if (input.value().rank() != 1 || input.size() != cell.w_in.value().rows()) {
    throw DimensionError("gru_step: input " + shape_string(input.shape()) + " vs input weights " +
                         shape_string(cell.w_in.shape()));
  }
  const Var gx = add_bias(matmul(input, cell.w_in), cell.bias);
  const Var gh = matmul(state, cell.w_hid);
  const Var z = sigmoid(add(slice(gx, 0, h), slice(gh, 0, h)));
  const Var r = sigmoid(add(slice(gx, h, h), slice(gh, h, h)));
  const Var n = tanh(add(slice(gx, 2 * h, h), mul(r, slice(gh, 2 * h, h))));
  // h' = h + z * (n - h)
  return add(state, mul(z, sub(n, state)));
}

std::vector<Var> gru_sequence(const GruCell::Bound& cell, const std::vector<Var>& inputs) {
  if (inputs.empty()) throw ValidationError("gru_sequence: empty input sequence");
  Var state = inputs.front().tape->constant(DenseArray({cell.hidden}, 0.0));
  std::vector<Var> states;
  states.reserve(inputs.size());
  for (const auto& x : inputs) {
    state = gru_step(cell, state, x);
    states.push_back(state);
  }
  return states;
}

}  // namespace traceseq::numkit
