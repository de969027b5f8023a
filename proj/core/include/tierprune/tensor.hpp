#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace tierprune {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major float32 array with an optional gradient buffer.
///
/// Tensors are plain values: copying one copies its storage. The gradient
/// buffer exists only once something has been accumulated into it (or after
/// zero_grad()), and always has numel() entries.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor scalar(float value) { return Tensor({1}, value); }

  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return values_.size(); }

  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }
  float* data() { return values_.data(); }
  const float* data() const { return values_.data(); }

  float& operator[](std::size_t i) { return values_[i]; }
  float operator[](std::size_t i) const { return values_[i]; }

  /// Value of a one-element tensor.
  float item() const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const { return !grad_.empty(); }
  std::span<float> grad() { return grad_; }
  std::span<const float> grad() const { return grad_; }
  /// Allocates the gradient buffer if needed and fills it with zeros.
  void zero_grad();
  /// Adds `delta` into the gradient buffer, allocating it on first use.
  void accumulate_grad(std::span<const float> delta);
  /// Drops the gradient buffer entirely.
  void clear_grad() { grad_.clear(); grad_.shrink_to_fit(); }

  /// Same storage, new shape. Throws DimensionError if the element count differs.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<float> values_;
  bool requires_grad_ = false;
  std::vector<float> grad_;
};

/// Elementwise p <- p - lr * g. Throws DimensionError on length mismatch and
/// ConfigError for negative lr.
void sgd_step(std::span<float> params, std::span<const float> grads, float lr);

/// Applies sgd_step to each tensor using its own gradient buffer. Tensors with
/// no gradient are left unchanged.
void sgd_step(std::span<Tensor* const> params, float lr);

}  // namespace tierprune
