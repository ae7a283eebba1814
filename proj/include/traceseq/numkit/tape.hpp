#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <vector>

#include "traceseq/numkit/dense_array.hpp"
#include "traceseq/numkit/param.hpp"

namespace traceseq::numkit {

class Tape;

// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const DenseArray& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  double item() const;
};

enum class Mode { kTrain, kEval };

// Linear record of executed operations. backward() walks the record in exact
// reverse execution order, and gradients reaching parameter leaves are added
// into TrainableParam::grad.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(DenseArray value);
  Var parameter(TrainableParam& param);
  Var record(DenseArray value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(DenseArray value, const std::vector<Var>& inputs, BackwardFn fn);

  const DenseArray& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Gradient buffer of a node, zero-initialised on first access.
  DenseArray& grad(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  void backward(Var output, double seed = 1.0);

  std::size_t size() const { return nodes_.size(); }
  // Node ids whose backward function ran, in the order they ran.
  const std::vector<std::size_t>& backward_order() const { return backward_order_; }

 private:
  struct Node {
    DenseArray value;
    DenseArray grad;
    BackwardFn backward;
    TrainableParam* param = nullptr;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;  // deque: references to values stay valid as the tape grows
  std::vector<std::size_t> backward_order_;
};

}  // namespace traceseq::numkit
