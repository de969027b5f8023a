#include "tierprune/autograd.hpp"

#include <string>

#include "tierprune/error.hpp"

namespace tierprune {

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) throw UsageError("variable does not belong to this tape");
  return nodes_[v.id];
}

Tape::Node& Tape::node(Var v) {
  if (v.id >= nodes_.size()) throw UsageError("variable does not belong to this tape");
  return nodes_[v.id];
}

Var Tape::param(Tensor& tensor) {
  Node n;
  n.external = &tensor;
  n.needs_grad = grad_enabled_ && tensor.requires_grad();
  if (n.needs_grad) n.trainable = &tensor;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::input(const Tensor& tensor) {
  Node n;
  n.external = &tensor;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const {
  const Node& n = node(v);
  return n.external ? *n.external : n.owned;
}

bool Tape::needs_grad(Var v) const { return node(v).needs_grad; }

std::span<float> Tape::grad_buffer(Var v) {
  Node& n = node(v);
  if (n.grad.empty()) n.grad.assign(value(v).numel(), 0.0f);
  return n.grad;
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  if (!value.all_finite()) {
    throw NumericError("non-finite value produced by op with output shape " +
                       shape_to_string(value.shape()));
  }
  Node n;
  n.owned = std::move(value);
  if (grad_enabled_ && fn) {
    for (Var in : inputs) {
      if (node(in).needs_grad) {
        n.needs_grad = true;
        break;
      }
    }
  }
  if (n.needs_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

void Tape::backward(Var loss) {
  if (consumed_) throw UsageError("backward() already ran on this tape");
  if (!grad_enabled_) throw UsageError("backward() on a tape recorded without gradients");
  if (value(loss).numel() != 1) {
    throw UsageError("backward() needs a scalar loss, got shape " +
                     shape_to_string(value(loss).shape()));
  }
  consumed_ = true;
  if (!node(loss).needs_grad) return;

  grad_buffer(loss)[0] = 1.0f;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.backward) {
      // The closure may allocate gradient buffers of earlier nodes, which
      // never reallocates nodes_, so holding the span is safe.
      std::vector<float> g = std::move(n.grad);
      n.backward(*this, g);
      n.backward = nullptr;
    } else if (n.trainable) {
      n.trainable->accumulate_grad(n.grad);
      n.grad.clear();
    }
  }
  for (Node& n : nodes_) {
    n.backward = nullptr;
    n.grad.clear();
    n.grad.shrink_to_fit();
  }
}

}  // namespace tierprune
