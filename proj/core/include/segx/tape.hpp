#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "segx/tensor.hpp"

namespace segx {

/// Handle to a value recorded on a Tape.
struct Var {
  std::uint32_t index = 0;
};

/// Define-by-run record of a computation for reverse-mode differentiation.
///
/// Every op appends one node holding its output value and a vector-Jacobian
/// closure. Nodes are appended in evaluation order, so the node list is
/// already topologically sorted and backward() is a single reverse sweep.
/// A tape and everything on it belongs to one thread.
class Tape {
 public:
  /// Receives the gradient of the node's output and accumulates into inputs
  /// through grad_buffer().
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op output. The closure is dropped when no input needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Tensor value, const std::vector<Var>& inputs, Backward backward);

  const Tensor& value(Var v) const { return nodes_.at(v.index).value; }
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool requires_grad(Var v) const { return nodes_.at(v.index).requires_grad; }

  /// Accumulated gradient. Returns zeros if nothing flowed into the node.
  Tensor grad(Var v) const;
  bool has_grad(Var v) const { return nodes_.at(v.index).grad.has_value(); }

  /// Gradient accumulator for v, allocated zero-filled on first use.
  Tensor& grad_buffer(Var v);

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    std::optional<Tensor> grad;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

}  // namespace segx
