#pragma once

#include <cstddef>
#include <span>

#include "tierprune/autograd.hpp"

// Differentiable ops recorded on a Tape. Storage is float32; every reduction
// (dot products, row sums, means, variances) accumulates in double.

namespace tierprune::ops {

/// a[m x k] * b[k x n].
Var matmul(Tape& tape, Var a, Var b);

/// x[n x in] * weight[out x in]^T + bias[out]. The last axis of x is the
/// feature axis; leading axes are flattened.
Var linear(Tape& tape, Var x, Var weight, Var bias);

Var add(Tape& tape, Var a, Var b);

/// x + y where y is tiled over the leading axes of x (y's shape must equal a
/// suffix of x's shape).
Var add_broadcast(Tape& tape, Var x, Var y);

Var mul(Tape& tape, Var a, Var b);
Var scale(Tape& tape, Var x, float factor);
Var sum(Tape& tape, Var x);
Var reshape(Tape& tape, Var x, Shape shape);

/// tanh-approximated GELU.
Var gelu(Tape& tape, Var x);

/// Max-subtracted softmax along `axis`.
Var softmax(Tape& tape, Var x, std::size_t axis);

/// Normalizes over the last axis: (x - mean) / sqrt(var + eps) * gain + bias.
Var layer_norm(Tape& tape, Var x, Var gain, Var bias, float eps = 1e-5f);

/// Mean over the batch of -log softmax(logits)[label]. Throws InputError for
/// labels outside [0, C).
Var cross_entropy(Tape& tape, Var logits, std::span<const int> labels);

/// Multi-head scaled dot-product self-attention on a fused projection.
/// qkv has shape [batch*tokens x 3*dim] laid out as [q | k | v]; the result
/// is [batch*tokens x dim].
Var attention(Tape& tape, Var qkv, std::size_t batch, std::size_t tokens, std::size_t heads);

/// Inserts `token` [dim] at position 0 of every sequence in x [batch x tokens x dim].
Var prepend_token(Tape& tape, Var x, Var token);

/// Row `index` of every sequence: x [batch x tokens x dim] -> [batch x dim].
Var select_token(Tape& tape, Var x, std::size_t index);

}  // namespace tierprune::ops
