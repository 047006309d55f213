#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hyneter/tensor.hpp"

namespace hyneter {

using NodeId = std::size_t;

class Tape;

/// A tensor value living on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  NodeId id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

/// Append-only differentiation record. Nodes are topologically ordered by
/// construction; backward replays them once in reverse.
///
/// Single writer: one tape per forward/backward pass.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, NodeId)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf that owns its value and is reported by backward() under `path`.
  Var parameter(std::string path, Tensor value);
  /// Leaf that refers to an external tensor; `value` must outlive the tape.
  Var borrow(const Tensor& value, std::string path, bool requires_grad);

  /// Appends an operation node. The backward rule is kept only when some
  /// input requires a gradient.
  Var record(std::string_view tag, std::initializer_list<Var> inputs, Tensor value, BackwardFn backward);
  Var record(std::string_view tag, const std::vector<Var>& inputs, Tensor value, BackwardFn backward);

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(NodeId id) const;
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  std::string_view tag(NodeId id) const { return nodes_.at(id).tag; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }

  /// Gradient of the loss w.r.t. node `id`'s output; valid inside a backward rule.
  std::span<const double> grad(NodeId id) const;
  /// Accumulation buffer for node `id`, zero-initialised on first use.
  std::span<double> grad_buffer(NodeId id);

  /// Reverse sweep from a scalar loss. Returns one gradient per parameter
  /// leaf, keyed by path; parameters the loss does not reach get zeros.
  std::map<std::string, Tensor> backward(Var loss);

  /// Number of node visits performed by the last backward() call.
  std::size_t last_backward_visits() const { return last_visits_; }

 private:
  struct Node {
    std::string tag;
    std::vector<NodeId> inputs;
    Tensor owned;
    const Tensor* borrowed = nullptr;
    std::string path;
    bool requires_grad = false;
    bool is_parameter = false;
    BackwardFn backward;
    std::vector<double> grad;
  };

  Var push(Node node);

  std::deque<Node> nodes_;  // stable addresses: Var::value() references survive later records
  std::map<std::string, NodeId> parameter_paths_;
  std::size_t last_visits_ = 0;
};

}  // namespace hyneter
