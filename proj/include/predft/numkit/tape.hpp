#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "predft/numkit/tensor.hpp"

namespace predft::numkit {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

/// Gradients of a scalar root keyed by node id.
using GradientMap = std::map<std::size_t, Tensor>;

/// Reverse-mode recording of primitive applications.
///
/// Nodes are appended in evaluation order, so every entry's inputs precede it
/// and replaying adjoints from the back visits each node once. A tape is
/// single-owner; record and backward must not race.
class Tape {
 public:
  /// Propagates `tape.grad(self)` into the gradient buffers of the node's
  /// inputs. Only called when the node's gradient is non-empty.
  using Adjoint = std::function<void(Tape& tape, std::size_t self)>;

  /// With `recording == false` values are kept but no adjoints are stored,
  /// which is what inference wants.
  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var leaf(Tensor value) {
    const bool rg = value.requires_grad();
    return leaf(std::move(value), rg);
  }

  Var leaf(Tensor value, bool requires_grad) {
    value.require_finite("leaf");
    Node n;
    n.requires_grad = requires_grad && recording_;
    n.is_leaf = true;
    n.value = std::move(value);
    n.op = "leaf";
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends the result of a primitive. The adjoint is dropped when no input
  /// needs a gradient or the tape is not recording.
  Var record(Tensor value, std::vector<std::size_t> inputs, Adjoint adjoint, const char* op) {
    value.require_finite(op);
    bool rg = false;
    for (std::size_t in : inputs) {
      if (in >= nodes_.size()) throw ValidationError(std::string(op) + ": input not on this tape");
      rg = rg || nodes_[in].requires_grad;
    }
    Node n;
    n.value = std::move(value);
    n.op = op;
    if (rg && recording_) {
      n.requires_grad = true;
      n.inputs = std::move(inputs);
      n.adjoint = std::move(adjoint);
    }
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const char* op(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }

  /// Gradient accumulated so far (empty tensor when nothing flowed in).
  const Tensor& grad(std::size_t id) const { return nodes_.at(id).grad; }
  const Tensor& grad(Var v) const { return grad(v.id); }

  /// Mutable gradient buffer for an input, zero-initialised on first touch.
  /// Returns nullptr when the node does not participate in differentiation.
  Tensor* grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
    return &n.grad;
  }

  /// Runs adjoints in reverse recording order from a scalar root and returns
  /// the gradient of every requires_grad leaf (zeros if unreachable).
  GradientMap backward(Var root) {
    if (root.tape != this) throw ValidationError("backward: root is not on this tape");
    if (nodes_[root.id].value.size() != 1) {
      throw ShapeError("backward: root must be scalar, got " +
                       shape_string(nodes_[root.id].value.shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor();
    if (nodes_[root.id].requires_grad) {
      nodes_[root.id].grad = Tensor::ones(nodes_[root.id].value.shape());
      for (std::size_t i = root.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.grad.empty() || !n.adjoint) continue;
        n.adjoint(*this, i);
      }
    }
    GradientMap out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (!n.is_leaf || !n.requires_grad) continue;
      out.emplace(i, n.grad.empty() ? Tensor::zeros(n.value.shape()) : n.grad);
    }
    return out;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool is_leaf = false;
    std::vector<std::size_t> inputs;
    Adjoint adjoint;
    const char* op = "";
  };

  bool recording_;
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }
inline bool Var::requires_grad() const { return tape->requires_grad(id); }

}  // namespace predft::numkit
