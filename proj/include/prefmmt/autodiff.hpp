#pragma once

// Tape-based reverse-mode differentiation over dense Eigen matrices.
//
// A Graph records every operation of one forward pass in creation order, so
// node ids are already a topological order and backward is a reverse scan.
// Parameters are bound by reference and never written by the graph; their
// gradients live in the graph and are read back with grad_of().

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "prefmmt/errors.hpp"

namespace prefmmt {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using NodeId = std::int32_t;

template <typename Scalar>
class Graph;

// Handle to a node of a Graph. Cheap to copy; valid until the graph is reset.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Graph<Scalar>* graph, NodeId id) : graph_(graph), id_(id) {}

  NodeId id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }
  Graph<Scalar>& graph() const { return *graph_; }

  const Matrix<Scalar>& value() const { return graph_->value(id_); }
  // nullptr until backward has routed a gradient into this node.
  const Matrix<Scalar>* grad() const { return graph_->grad(id_); }

  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

 private:
  Graph<Scalar>* graph_ = nullptr;
  NodeId id_ = -1;
};

struct GraphOptions {
  bool grad_enabled = true;
  bool training = false;  // enables dropout
  std::uint64_t seed = 0;
};

template <typename Scalar>
class Graph {
 public:
  using Value = Matrix<Scalar>;
  using BackwardFn = std::function<void(Graph&, NodeId self, const Value& grad)>;

  explicit Graph(GraphOptions options = {}) : options_(options), rng_(options.seed) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Tensor<Scalar> constant(Value value) {
    return push(std::move(value), nullptr, false, nullptr, "constant");
  }

  // Non-owning constant; `value` must outlive the graph.
  Tensor<Scalar> constant_ref(const Value& value) {
    return push(Value(), &value, false, nullptr, "constant");
  }

  // Binds a trainable buffer. Binding the same buffer twice yields the same
  // node, so gradients from every use accumulate in one place.
  Tensor<Scalar> parameter(const Value& value) {
    if (!options_.grad_enabled) return constant_ref(value);
    if (backward_done_) throw StateError("graph must be reset before recording after backward");
    if (auto it = bound_.find(&value); it != bound_.end()) return {this, it->second};
    auto t = push(Value(), &value, true, nullptr, "parameter");
    bound_.emplace(&value, t.id());
    return t;
  }

  // Appends an operation result. `backward` receives the gradient w.r.t. the
  // result and must add into the gradients of its inputs.
  Tensor<Scalar> record(Value value, std::initializer_list<Tensor<Scalar>> inputs,
                        BackwardFn backward, const char* op) {
    bool needs_grad = false;
    for (const auto& in : inputs) needs_grad = needs_grad || requires_grad(in.id());
    return push(std::move(value), nullptr, needs_grad, needs_grad ? std::move(backward) : nullptr,
                op);
  }

  Tensor<Scalar> record(Value value, const std::vector<Tensor<Scalar>>& inputs,
                        BackwardFn backward, const char* op) {
    bool needs_grad = false;
    for (const auto& in : inputs) needs_grad = needs_grad || requires_grad(in.id());
    return push(std::move(value), nullptr, needs_grad, needs_grad ? std::move(backward) : nullptr,
                op);
  }

  void backward(const Tensor<Scalar>& loss) {
    if (backward_done_) throw StateError("backward called twice without reset");
    const auto& v = value(loss.id());
    if (v.rows() != 1 || v.cols() != 1)
      throw ContractError("backward requires a scalar loss, got " + std::to_string(v.rows()) +
                          "x" + std::to_string(v.cols()));
    backward_done_ = true;
    if (!requires_grad(loss.id())) return;
    grad_ref(loss.id()).setOnes();
    for (NodeId id = loss.id(); id >= 0; --id) {
      Node& node = nodes_[static_cast<std::size_t>(id)];
      if (!node.has_grad || !node.backward) continue;
      if (!node.grad.allFinite())
        throw NumericError(std::string("non-finite gradient at ") + node.op, id);
      node.backward(*this, id, node.grad);
    }
    for (const auto& [ptr, id] : bound_) {
      const Node& node = nodes_[static_cast<std::size_t>(id)];
      if (node.has_grad && !node.grad.allFinite())
        throw NumericError("non-finite parameter gradient", id);
    }
  }

  void reset() {
    nodes_.clear();
    bound_.clear();
    backward_done_ = false;
  }

  const Value& value(NodeId id) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(id));
    return n.external ? *n.external : n.owned;
  }

  const Value* grad(NodeId id) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(id));
    return n.has_grad ? &n.grad : nullptr;
  }

  // Gradient of a bound parameter, or nullptr if it is unbound/unreached.
  const Value* grad_of(const Value& param) const {
    auto it = bound_.find(&param);
    return it == bound_.end() ? nullptr : grad(it->second);
  }

  bool requires_grad(NodeId id) const {
    return nodes_[static_cast<std::size_t>(id)].requires_grad;
  }

  // Accumulation target for backward rules; allocated as zeros on first use.
  Value& grad_ref(NodeId id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad) {
      const Value& v = n.external ? *n.external : n.owned;
      n.grad.setZero(v.rows(), v.cols());
      n.has_grad = true;
    }
    return n.grad;
  }

  const char* op_name(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)).op; }
  std::size_t size() const { return nodes_.size(); }
  bool grad_enabled() const { return options_.grad_enabled; }
  bool training() const { return options_.training; }
  std::mt19937_64& rng() { return rng_; }

 private:
  struct Node {
    Value owned;
    const Value* external = nullptr;
    Value grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
    const char* op = "";
  };

  Tensor<Scalar> push(Value owned, const Value* external, bool needs_grad, BackwardFn fn,
                      const char* op) {
    if (backward_done_) throw StateError("graph must be reset before recording after backward");
    const NodeId id = static_cast<NodeId>(nodes_.size());
    const Value& v = external ? *external : owned;
    if (!v.allFinite()) throw NumericError(std::string("non-finite value from ") + op, id);
    Node n;
    n.owned = std::move(owned);
    n.external = external;
    n.requires_grad = needs_grad;
    n.backward = std::move(fn);
    n.op = op;
    nodes_.push_back(std::move(n));
    return {this, id};
  }

  GraphOptions options_;
  std::mt19937_64 rng_;
  std::vector<Node> nodes_;
  std::unordered_map<const Value*, NodeId> bound_;
  bool backward_done_ = false;
};

}  // namespace prefmmt
