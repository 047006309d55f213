#include "hyneter/tape.hpp"

#include <stdexcept>

namespace hyneter {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node node;
  node.tag = "constant";
  node.owned = std::move(value);
  return push(std::move(node));
}

Var Tape::parameter(std::string path, Tensor value) {
  if (!parameter_paths_.emplace(path, nodes_.size()).second) {
    throw std::invalid_argument("duplicate parameter path '" + path + "'");
  }
  Node node;
  node.tag = "parameter";
  node.owned = std::move(value);
  node.path = std::move(path);
  node.requires_grad = true;
  node.is_parameter = true;
  return push(std::move(node));
}

Var Tape::borrow(const Tensor& value, std::string path, bool requires_grad) {
  if (requires_grad && !parameter_paths_.emplace(path, nodes_.size()).second) {
    throw std::invalid_argument("duplicate parameter path '" + path + "'");
  }
  Node node;
  node.tag = requires_grad ? "parameter" : "constant";
  node.borrowed = &value;
  node.path = std::move(path);
  node.requires_grad = requires_grad;
  node.is_parameter = requires_grad;
  return push(std::move(node));
}

Var Tape::record(std::string_view tag, std::initializer_list<Var> inputs, Tensor value, BackwardFn backward) {
  return record(tag, std::vector<Var>(inputs), std::move(value), std::move(backward));
}

Var Tape::record(std::string_view tag, const std::vector<Var>& inputs, Tensor value, BackwardFn backward) {
  Node node;
  node.tag = std::string(tag);
  node.owned = std::move(value);
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw std::invalid_argument("operation '" + node.tag + "' mixes tapes");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  return push(std::move(node));
}

const Tensor& Tape::value(NodeId id) const {
  const Node& node = nodes_.at(id);
  return node.borrowed ? *node.borrowed : node.owned;
}

std::span<const double> Tape::grad(NodeId id) const { return nodes_.at(id).grad; }

std::span<double> Tape::grad_buffer(NodeId id) {
  Node& node = nodes_.at(id);
  if (node.grad.empty()) node.grad.assign(value(id).numel(), 0.0);
  return node.grad;
}

std::map<std::string, Tensor> Tape::backward(Var loss) {
  if (&loss.tape() != this) throw std::invalid_argument("backward: loss belongs to a different tape");
  if (loss.value().numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  for (Node& node : nodes_) node.grad.clear();
  last_visits_ = 0;
  if (nodes_[loss.id()].requires_grad) {
    grad_buffer(loss.id())[0] = 1.0;
    for (NodeId id = loss.id() + 1; id-- > 0;) {
      Node& node = nodes_[id];
      if (node.grad.empty() || !node.backward) continue;
      ++last_visits_;
      node.backward(*this, id);
    }
  }
  std::map<std::string, Tensor> grads;
  for (const auto& [path, id] : parameter_paths_) {
    const Node& node = nodes_[id];
    const Shape& shape = value(id).shape();
    if (node.grad.empty()) {
      grads.emplace(path, Tensor::zeros(shape));
    } else {
      grads.emplace(path, Tensor(shape, node.grad));
    }
  }
  return grads;
}

}  // namespace hyneter
