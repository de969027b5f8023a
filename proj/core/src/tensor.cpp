#include "tierprune/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "tierprune/error.hpp"

namespace tierprune {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

void check_extents(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
  for (auto extent : shape) {
    if (extent == 0) {
      throw DimensionError("tensor extents must be positive, got " + shape_to_string(shape));
    }
  }
}

}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  values_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  check_extents(shape_);
  if (values_.size() != shape_numel(shape_)) {
    throw DimensionError("value count " + std::to_string(values_.size()) +
                         " does not match shape " + shape_to_string(shape_));
  }
}

float Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() needs a one-element tensor, shape is " + shape_to_string(shape_));
  }
  return values_[0];
}

void Tensor::zero_grad() { grad_.assign(values_.size(), 0.0f); }

void Tensor::accumulate_grad(std::span<const float> delta) {
  if (delta.size() != values_.size()) {
    throw DimensionError("gradient length does not match tensor " + shape_to_string(shape_));
  }
  if (grad_.empty()) grad_.assign(values_.size(), 0.0f);
  for (std::size_t i = 0; i < delta.size(); ++i) grad_[i] += delta[i];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw DimensionError("cannot reshape " + shape_to_string(shape_) + " to " +
                         shape_to_string(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

bool Tensor::all_finite() const {
  for (float v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void sgd_step(std::span<float> params, std::span<const float> grads, float lr) {
  if (params.size() != grads.size()) {
    throw DimensionError("sgd_step: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
  }
  if (!(lr >= 0.0f)) throw ConfigError("sgd_step: learning rate must be nonnegative");
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
}

void sgd_step(std::span<Tensor* const> params, float lr) {
  for (Tensor* p : params) {
    if (p->has_grad()) sgd_step(p->values(), p->grad(), lr);
  }
}

}  // namespace tierprune
