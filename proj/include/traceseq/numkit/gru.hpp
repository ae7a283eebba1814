#pragma once

#include <string>

#include "traceseq/numkit/binder.hpp"
#include "traceseq/numkit/ops.hpp"
#include "traceseq/numkit/param.hpp"

namespace traceseq::numkit {

// Gated recurrent cell shared by every recurrent layer in the project:
//   z = sigmoid(x Wz + h Uz + bz)        update gate
//   r = sigmoid(x Wr + h Ur + br)        reset gate
//   n = tanh(x Wn + bn + r * (h Un))     candidate
//   h' = z * n + (1 - z) * h
// Gate weights are packed as [z | r | n] along the output axis.
class GruCell {
 public:
  GruCell() = default;
  GruCell(std::string prefix, std::size_t input_dim, std::size_t hidden_dim);

  void init(ParameterSet& params, Rng& rng) const;

  struct Bound {
    Var w_in;   // [input x 3h]
    Var w_hid;  // [h x 3h]
    Var bias;   // [3h]
    std::size_t hidden = 0;
  };
  Bound bind(Tape& tape, ParameterSet& params) const;
  Bound bind(Binder& binder) const;

  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden_dim() const { return hidden_dim_; }
  const std::string& prefix() const { return prefix_; }

 private:
  std::string prefix_;
  std::size_t input_dim_ = 0;
  std::size_t hidden_dim_ = 0;
};

Var gru_step(const GruCell::Bound& cell, Var state, Var input);

// Runs the cell over inputs from a zero state and returns every hidden state.
std::vector<Var> gru_sequence(const GruCell::Bound& cell, const std::vector<Var>& inputs);

}  // namespace traceseq::numkit
