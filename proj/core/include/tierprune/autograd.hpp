#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "tierprune/tensor.hpp"

namespace tierprune {

/// Handle to a value recorded on a Tape. Only meaningful for the tape that
/// produced it.
struct Var {
  static constexpr std::size_t kInvalid = std::numeric_limits<std::size_t>::max();
  std::size_t id = kInvalid;
  bool valid() const { return id != kInvalid; }
};

/// Reverse-mode gradient tape for one forward pass.
///
/// Every op appends a node holding its output value and a closure that maps
/// the output gradient onto its inputs. backward() walks the nodes in reverse
/// creation order, which is a valid topological order because inputs always
/// precede outputs. Parameter leaves refer to tensors owned elsewhere; their
/// gradients are added into Tensor::grad() so repeated passes accumulate until
/// the caller zeroes them.
///
/// A tape is single-use: after backward() the closures and intermediate
/// gradients are released and another backward() throws UsageError. Values
/// stay readable.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::span<const float> out_grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  /// Leaf bound to an external tensor. Gradients flow back into it when the
  /// tape records gradients and the tensor has requires_grad set.
  Var param(Tensor& tensor);
  /// Read-only leaf bound to an external tensor; never receives gradients.
  Var input(const Tensor& tensor);
  /// Leaf owning its value; never receives gradients.
  Var constant(Tensor value);

  const Tensor& value(Var v) const;
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool needs_grad(Var v) const;

  /// Gradient buffer of a node, allocated (zeroed) on first access. Only for
  /// use inside backward closures.
  std::span<float> grad_buffer(Var v);

  /// Appends an op output. Throws NumericError if any value is not finite.
  /// `fn` may be empty when no input needs a gradient.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);

  /// Propagates d(loss)/d(node) to every node and flushes parameter
  /// gradients. `loss` must hold a single element.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor* trainable = nullptr;
    bool needs_grad = false;
    BackwardFn backward;
    std::vector<float> grad;
  };

  const Node& node(Var v) const;
  Node& node(Var v);

  bool grad_enabled_;
  bool consumed_ = false;
  std::vector<Node> nodes_;
};

}  // namespace tierprune
