#include "segx/tape.hpp"

#include <string>

namespace segx {

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), requires_grad, std::nullopt, nullptr});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  bool needs = false;
  for (Var in : inputs) needs = needs || requires_grad(in);
  nodes_.push_back(Node{std::move(value), needs, std::nullopt, needs ? std::move(backward) : nullptr});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, Backward backward) {
  bool needs = false;
  for (Var in : inputs) needs = needs || requires_grad(in);
  nodes_.push_back(Node{std::move(value), needs, std::nullopt, needs ? std::move(backward) : nullptr});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor Tape::grad(Var v) const {
  const Node& node = nodes_.at(v.index);
  if (node.grad) return *node.grad;
  return Tensor(node.value.shape(), 0.0);
}

Tensor& Tape::grad_buffer(Var v) {
  Node& node = nodes_.at(v.index);
  if (!node.grad) node.grad.emplace(node.value.shape(), 0.0);
  return *node.grad;
}

void Tape::backward(Var loss) {
  if (value(loss).size() != 1) {
    fail(ErrorKind::Argument,
         "backward needs a scalar loss, got shape " + to_string(value(loss).shape()));
  }
  for (auto& node : nodes_) node.grad.reset();
  grad_buffer(loss)[0] = 1.0;
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || !node.grad) continue;
    node.backward(*this, *node.grad);
  }
}

}  // namespace segx
