#include "traceseq/numkit/tape.hpp"

#include "traceseq/errors.hpp"

namespace traceseq::numkit {

const DenseArray& Var::value() const { return tape->value(id); }

double Var::item() const {
  const auto& v = value();
  if (v.size() != 1) throw ContractError("item() on non-scalar of shape " + shape_string(v.shape()));
  return v[0];
}

Var Tape::constant(DenseArray value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, nullptr, false});
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(TrainableParam& param) {
  nodes_.push_back(Node{param.value, {}, nullptr, &param, true});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(DenseArray value, std::initializer_list<Var> inputs, BackwardFn fn) {
  bool needs = false;
  for (const auto& in : inputs) {
    if (in.tape != this) throw ContractError("operation mixes variables from different tapes");
    needs = needs || nodes_[in.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : nullptr, nullptr, needs});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(DenseArray value, const std::vector<Var>& inputs, BackwardFn fn) {
  bool needs = false;
  for (const auto& in : inputs) {
    if (in.tape != this) throw ContractError("operation mixes variables from different tapes");
    needs = needs || nodes_[in.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : nullptr, nullptr, needs});
  return Var{this, nodes_.size() - 1};
}

DenseArray& Tape::grad(std::size_t id) {
  auto& node = nodes_[id];
  if (node.grad.empty()) node.grad = DenseArray(node.value.shape(), 0.0);
  return node.grad;
}

void Tape::backward(Var output, double seed) {
  if (output.tape != this) throw ContractError("backward called with a variable from another tape");
  if (nodes_[output.id].value.size() != 1) {
    throw ContractError("backward requires a scalar output, got shape " +
                        shape_string(nodes_[output.id].value.shape()));
  }
  if (!nodes_[output.id].requires_grad) return;
  backward_order_.clear();
  grad(output.id)[0] += seed;
  for (std::size_t id = output.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.grad.empty()) continue;
    if (node.backward) {
      backward_order_.push_back(id);
      // The callback may grow grad buffers of earlier nodes but never appends.
      node.backward(*this, id);
    } else if (node.param != nullptr) {
      auto& pg = node.param->grad;
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += node.grad[i];
    }
  }
}

}  // namespace traceseq::numkit
