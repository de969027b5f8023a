#pragma once
// Shared oracles and fixtures for the test binaries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "tierprune/autograd.hpp"
#include "tierprune/data.hpp"
#include "tierprune/model.hpp"
#include "tierprune/ops.hpp"
#include "tierprune/tensor.hpp"

namespace tierprune::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  Tensor t(std::move(shape));
  for (float& v : t.values()) v = u(rng);
  return t;
}

/// Builds the output under test on the given tape from the current parameter
/// values. The checked loss is sum_i r_i * y_i.
using OutputBuilder = std::function<Var(Tape&)>;

struct FdSample {
  std::size_t param = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct FdReport {
  std::vector<FdSample> samples;
  double max_rel_error = 0.0;
};

/// |a - n| / max(|a|, |n|, floor). The floor only matters for coordinates
/// whose gradient is tiny next to the rest, where float32 round-off of the
/// outputs dominates any difference quotient.
inline double relative_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

struct FdOptions {
  std::size_t per_param = 100;
  std::uint64_t seed = 1;
  /// Seed for the reduction weights r; 0 means r = 1 everywhere.
  std::uint64_t weight_seed = 0;
  double h = 1e-3;
  /// Denominator floor as a fraction of the largest analytic gradient seen.
  double relative_floor = 1e-2;
};

inline Tensor reduction_weights(const Shape& shape, std::uint64_t seed) {
  return seed == 0 ? Tensor(shape, 1.0f) : random_tensor(shape, seed);
}

/// Loss value with the reduction done in double on the float outputs.
inline double eval_loss(const OutputBuilder& build, const Tensor& r) {
  Tape tape(/*grad_enabled=*/false);
  const Tensor& y = tape.value(build(tape));
  double total = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) total += static_cast<double>(r[i]) * y[i];
  return total;
}

/// Scalar loss evaluated in double, for the numeric side of a check.
using NumericLoss = std::function<double()>;

/// Central finite differences of `numeric` against the tape gradient of the
/// scalar built by `analytic`. `per_param` coordinates are drawn from each
/// parameter (all of them when it is smaller). The step used in the quotient
/// is the one float storage actually realised.
inline FdReport finite_difference_check(std::vector<Tensor*> params, const OutputBuilder& analytic,
                                        const NumericLoss& numeric, const FdOptions& o = {}) {
  for (Tensor* p : params) {
    p->set_requires_grad(true);
    p->zero_grad();
  }
  {
    Tape tape;
    tape.backward(analytic(tape));
  }
  FdReport report;
  std::mt19937_64 rng(o.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    std::vector<std::size_t> coords(p.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords.size() > o.per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(o.per_param);
    }
    for (std::size_t idx : coords) {
      const float orig = p[idx];
      p[idx] = static_cast<float>(orig + o.h);
      const double up_x = p[idx];
      const double up = numeric();
      p[idx] = static_cast<float>(orig - o.h);
      const double down_x = p[idx];
      const double down = numeric();
      p[idx] = orig;
      FdSample s;
      s.param = pi;
      s.index = idx;
      s.analytic = p.grad()[idx];
      s.numeric = (up - down) / (up_x - down_x);
      report.samples.push_back(s);
    }
  }
  double scale = 0.0;
  for (const FdSample& s : report.samples) scale = std::max(scale, std::abs(s.analytic));
  const double floor = std::max(o.relative_floor * scale, 1e-12);
  for (FdSample& s : report.samples) {
    s.rel_error = relative_error(s.analytic, s.numeric, floor);
    report.max_rel_error = std::max(report.max_rel_error, s.rel_error);
  }
  return report;
}

/// Same check for an arbitrary output y, reduced to Σ r·y with r fixed
/// (weight_seed) and the reduction done in double.
inline FdReport finite_difference_check(std::vector<Tensor*> params, const OutputBuilder& build,
                                        const FdOptions& o = {}) {
  Tensor r;
  {
    Tape tape(/*grad_enabled=*/false);
    r = reduction_weights(tape.shape(build(tape)), o.weight_seed);
  }
  return finite_difference_check(
      params, [&](Tape& t) { return ops::sum(t, ops::mul(t, build(t), t.constant(r))); },
      [&] { return eval_loss(build, r); }, o);
}

/// Mean cross-entropy of float logits, computed in double.
inline double cross_entropy_double(const Tensor& logits, std::span<const int> labels) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = logits.data() + i * k;
    double mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    total += mx + std::log(z) - static_cast<double>(row[static_cast<std::size_t>(labels[i])]);
  }
  return total / static_cast<double>(n);
}

/// Weighted sum with fixed random weights, for tests that need a scalar.
inline Var probe_sum(Tape& tape, Var y, std::uint64_t seed) {
  Var w = tape.constant(random_tensor(tape.shape(y), seed));
  return ops::sum(tape, ops::mul(tape, y, w));
}

inline ViTConfig tiny_config(std::uint64_t seed = 7, int depth = 2) {
  ViTConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.embed_dim = 16;
  c.num_heads = 2;
  c.depth = depth;
  c.mlp_ratio = 2;
  c.num_classes = 4;
  c.seed = seed;
  return c;
}

inline Dataset tiny_dataset(int num_classes = 4, int per_class = 4, int image_size = 8,
                            std::uint64_t seed = 3, float noise = 0.2f) {
  SynthOptions o;
  o.num_classes = num_classes;
  o.per_class = per_class;
  o.image_size = image_size;
  o.noise = noise;
  o.seed = seed;
  return synth_dataset(o);
}

}  // namespace tierprune::testing
