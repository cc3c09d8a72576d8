#pragma once

// Reverse-mode differentiation tape.
//
// Every primitive appends one node holding its forward value, the ids of its
// inputs, and a closure that pushes the node's gradient into those inputs.
// Nodes are appended after their inputs, so reverse id order is a valid reverse
// topological order. Parameters enter a tape through `param()`, which records a
// single leaf per parameter; uses at many time-steps therefore accumulate into
// one gradient buffer, which is what backpropagation through time requires.

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fusionflow/error.hpp"
#include "fusionflow/tensor.hpp"

namespace fusionflow {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad = Tensor<T>(value.shape()); }
  std::size_t numel() const { return value.numel(); }
};

template <typename T>
class Tape;

/// Lightweight handle to a tape node.
template <typename T>
class Var {
public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape<T>* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t i) const { return value().dim(i); }
  bool requires_grad() const;

private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
public:
  /// Called during backward with the node's upstream gradient.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  struct Node {
    std::string op;
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
  };

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }

  Var<T> constant(Tensor<T> value, std::string op = "constant") {
    nodes_.push_back(Node{std::move(op), std::move(value), {}, {}, {}, nullptr, false});
    return Var<T>(this, nodes_.size() - 1);
  }

  /// Leaf whose gradient is tracked without being tied to a Parameter.
  Var<T> variable(Tensor<T> value) {
    nodes_.push_back(Node{"variable", std::move(value), {}, {}, {}, nullptr, grad_enabled_});
    return Var<T>(this, nodes_.size() - 1);
  }

  /// Leaf bound to a parameter; repeated calls return the same node.
  Var<T> param(Parameter<T>& p) {
    if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var<T>(this, it->second);
    nodes_.push_back(Node{"param:" + p.name, p.value, {}, {}, {}, &p, grad_enabled_});
    param_ids_.emplace(&p, nodes_.size() - 1);
    return Var<T>(this, nodes_.size() - 1);
  }

  Var<T> record(std::string op, Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn) {
    Node n{std::move(op), std::move(value), {}, {}, {}, nullptr, false};
    n.inputs.reserve(inputs.size());
    for (const auto& v : inputs) {
      check_owned(v);
      n.inputs.push_back(v.id());
      n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient buffer a backward closure accumulates into. During backward this is a
  /// zeroed scratch tensor private to the running node; the tape adds it to the input's
  /// gradient once the closure returns, so each consumer contributes one summand.
  Tensor<T>& grad_buffer(std::size_t id) {
    Node& n = nodes_.at(id);
    if (in_backward_) {
      for (auto& [sid, buf] : scratch_)
        if (sid == id) return buf;
      scratch_.emplace_back(id, Tensor<T>(n.value.shape()));
      return scratch_.back().second;
    }
    if (n.grad.numel() != n.value.numel()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  /// Gradient of the last backward pass w.r.t. a node (zeros if unreached).
  Tensor<T> grad(const Var<T>& v) const {
    check_owned(v);
    const Node& n = nodes_[v.id()];
    if (n.grad.numel() != n.value.numel()) return Tensor<T>(n.value.shape());
    return n.grad;
  }

  void backward(const Var<T>& loss) {
    check_owned(loss);
    if (backward_done_) throw InvalidState("backward already run on this tape; call reset() first");
    if (loss.value().numel() != 1)
      throw InvalidInput("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    backward_done_ = true;
    if (!nodes_[loss.id()].requires_grad) return;
    grad_buffer(loss.id()).fill(T(1));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.numel() == 0) continue;
      if (n.backward) {
        in_backward_ = true;
        n.backward(*this, n.grad);
        in_backward_ = false;
        for (auto& [sid, buf] : scratch_) {
          Tensor<T>& dst = nodes_[sid].grad;
          if (dst.numel() != buf.numel()) {
            dst = std::move(buf);
          } else {
            for (std::size_t k = 0; k < dst.numel(); ++k) dst[k] += buf[k];
          }
        }
        scratch_.clear();
      }
      if (n.param) {
        auto& pg = n.param->grad;
        if (pg.numel() != n.grad.numel()) pg = Tensor<T>(n.param->value.shape());
        for (std::size_t k = 0; k < pg.numel(); ++k) pg[k] += n.grad[k];
      }
    }
  }

  /// Drops every node; parameters keep their accumulated gradients.
  void reset() {
    nodes_.clear();
    param_ids_.clear();
    backward_done_ = false;
  }

  /// Index of the first node whose forward value holds NaN/Inf, or size() if none.
  std::size_t first_non_finite() const {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (!nodes_[i].value.all_finite()) return i;
    return nodes_.size();
  }

  void check_owned(const Var<T>& v) const {
    if (v.tape() != this) throw InvalidInput("variable does not belong to this tape");
    if (v.id() >= nodes_.size()) throw InvalidInput("stale variable handle");
  }

private:
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_ids_;
  std::deque<std::pair<std::size_t, Tensor<T>>> scratch_;  // deque: references stay valid on growth
  bool grad_enabled_;
  bool backward_done_ = false;
  bool in_backward_ = false;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  if (!tape_) throw InvalidInput("use of an empty variable");
  return tape_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_ && tape_->requires_grad(id_);
}

}  // namespace fusionflow
