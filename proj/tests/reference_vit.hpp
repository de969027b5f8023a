#pragma once
// Double-precision reference forward pass of the mini-ViT, written
// independently of the tape. Used as a finite-difference oracle: parameters are
// copied to double once and perturbed by exactly ±h, so the numeric side sees
// no float32 storage noise at all.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "support.hpp"
#include "tierprune/data.hpp"
#include "tierprune/model.hpp"

namespace tierprune::testing {

class ReferenceViT {
 public:
  explicit ReferenceViT(Model& model) : cfg_(model.config()) {
    for (auto& p : model.parameters()) {
      params_[p.name].assign(p.tensor->values().begin(), p.tensor->values().end());
      order_.push_back(p.name);
    }
  }

  std::vector<double>& param(const std::string& name) { return params_.at(name); }
  const std::vector<std::string>& names() const { return order_; }

  /// Logits [batch x classes], row-major.
  std::vector<double> logits(const Tensor& images) const {
    const std::size_t batch = images.dim(0);
    const auto s = static_cast<std::size_t>(cfg_.image_size);
    const auto p = static_cast<std::size_t>(cfg_.patch_size);
    const std::size_t side = s / p, np = side * side, feat = 3 * p * p;
    const std::size_t tokens = np + 1;
    const auto d = static_cast<std::size_t>(cfg_.embed_dim);
    const auto heads = static_cast<std::size_t>(cfg_.num_heads);
    const auto hidden = static_cast<std::size_t>(cfg_.hidden_dim());
    const auto classes = static_cast<std::size_t>(cfg_.num_classes);

    std::vector<double> out(batch * classes);
    for (std::size_t b = 0; b < batch; ++b) {
      // Patch embedding, class token, positions.
      std::vector<double> x(tokens * d);
      const auto& cls = at("cls_token");
      const auto& pos = at("pos_embed");
      for (std::size_t j = 0; j < d; ++j) x[j] = cls[j] + pos[j];
      std::vector<double> patch(feat);
      for (std::size_t py = 0; py < side; ++py)
        for (std::size_t px = 0; px < side; ++px) {
          std::size_t f = 0;
          for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < p; ++y)
              for (std::size_t xx = 0; xx < p; ++xx)
                patch[f++] = images[((b * 3 + c) * s + py * p + y) * s + px * p + xx];
          const std::size_t t = 1 + py * side + px;
          affine(patch.data(), feat, at("patch_embed.weight"), at("patch_embed.bias"), d,
                 x.data() + t * d);
          for (std::size_t j = 0; j < d; ++j) x[t * d + j] += pos[t * d + j];
        }

      for (int blk = 0; blk < cfg_.depth; ++blk) {
        const std::string pre = "blocks." + std::to_string(blk) + ".";
        // Attention sub-block.
        std::vector<double> h = norm(x, tokens, d, at(pre + "norm1.gain"), at(pre + "norm1.bias"));
        std::vector<double> qkv(tokens * 3 * d);
        for (std::size_t t = 0; t < tokens; ++t)
          affine(h.data() + t * d, d, at(pre + "qkv.weight"), at(pre + "qkv.bias"), 3 * d,
                 qkv.data() + t * 3 * d);
        std::vector<double> att(tokens * d, 0.0);
        const std::size_t hd = d / heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
        std::vector<double> w(tokens);
        for (std::size_t hh = 0; hh < heads; ++hh)
          for (std::size_t i = 0; i < tokens; ++i) {
            double mx = -INFINITY;
            for (std::size_t j = 0; j < tokens; ++j) {
              double dot = 0.0;
              for (std::size_t e = 0; e < hd; ++e)
                dot += qkv[i * 3 * d + hh * hd + e] * qkv[j * 3 * d + d + hh * hd + e];
              w[j] = dot * scale;
              mx = std::max(mx, w[j]);
            }
            double z = 0.0;
            for (double& v : w) z += (v = std::exp(v - mx));
            for (std::size_t j = 0; j < tokens; ++j)
              for (std::size_t e = 0; e < hd; ++e)
                att[i * d + hh * hd + e] += w[j] / z * qkv[j * 3 * d + 2 * d + hh * hd + e];
          }
        std::vector<double> proj(d);
        for (std::size_t t = 0; t < tokens; ++t) {
          affine(att.data() + t * d, d, at(pre + "attn_out.weight"), at(pre + "attn_out.bias"), d,
                 proj.data());
          for (std::size_t j = 0; j < d; ++j) x[t * d + j] += proj[j];
        }
        // MLP sub-block.
        h = norm(x, tokens, d, at(pre + "norm2.gain"), at(pre + "norm2.bias"));
        std::vector<double> mid(hidden), back(d);
        for (std::size_t t = 0; t < tokens; ++t) {
          affine(h.data() + t * d, d, at(pre + "fc1.weight"), at(pre + "fc1.bias"), hidden, mid.data());
          for (double& v : mid) v = 0.5 * v * (1.0 + std::tanh(0.7978845608028654 * (v + 0.044715 * v * v * v)));
          affine(mid.data(), hidden, at(pre + "fc2.weight"), at(pre + "fc2.bias"), d, back.data());
          for (std::size_t j = 0; j < d; ++j) x[t * d + j] += back[j];
        }
      }

      const std::vector<double> y = norm(x, tokens, d, at("norm.gain"), at("norm.bias"));
      affine(y.data(), d, at("head.weight"), at("head.bias"), classes, out.data() + b * classes);
    }
    return out;
  }

  /// Mean cross-entropy over the dataset.
  double loss(const Dataset& ds) const {
    const auto classes = static_cast<std::size_t>(cfg_.num_classes);
    const auto z = logits(ds.images);
    double total = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const double* row = z.data() + i * classes;
      const double mx = *std::max_element(row, row + classes);
      double s = 0.0;
      for (std::size_t j = 0; j < classes; ++j) s += std::exp(row[j] - mx);
      total += mx + std::log(s) - row[static_cast<std::size_t>(ds.labels[i])];
    }
    return total / static_cast<double>(ds.size());
  }

 private:
  const std::vector<double>& at(const std::string& name) const { return params_.at(name); }

  // y[out] = W[out x in] x + b
  static void affine(const double* x, std::size_t in, const std::vector<double>& w,
                     const std::vector<double>& bias, std::size_t out, double* y) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = bias[o];
      for (std::size_t i = 0; i < in; ++i) acc += w[o * in + i] * x[i];
      y[o] = acc;
    }
  }

  static std::vector<double> norm(const std::vector<double>& x, std::size_t rows, std::size_t d,
                                  const std::vector<double>& gain, const std::vector<double>& bias) {
    const double eps = static_cast<double>(1e-5f);
    std::vector<double> y(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
      const double* row = x.data() + r * d;
      double mean = 0.0, var = 0.0;
      for (std::size_t j = 0; j < d; ++j) mean += row[j];
      mean /= static_cast<double>(d);
      for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
      var /= static_cast<double>(d);
      const double is = 1.0 / std::sqrt(var + eps);
      for (std::size_t j = 0; j < d; ++j) y[r * d + j] = (row[j] - mean) * is * gain[j] + bias[j];
    }
    return y;
  }

  ViTConfig cfg_;
  std::map<std::string, std::vector<double>> params_;
  std::vector<std::string> order_;
};

/// Tape gradients of the model's mean cross-entropy against central
/// differences of the double reference, `per_param` coordinates per tensor,
/// step exactly ±h.
inline FdReport reference_gradient_check(Model& model, const Dataset& ds, std::size_t per_param,
                                         std::uint64_t seed, double h, double relative_floor = 1e-2) {
  model.set_requires_grad(true);
  model.zero_grad();
  {
    Tape tape;
    tape.backward(ops::cross_entropy(tape, model.forward(tape, ds.images), ds.labels));
  }
  ReferenceViT ref(model);
  auto named = model.parameters();
  FdReport report;
  std::mt19937_64 rng(seed);
  for (std::size_t pi = 0; pi < named.size(); ++pi) {
    std::vector<double>& p = ref.param(named[pi].name);
    std::vector<std::size_t> coords(p.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords.size() > per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(per_param);
    }
    for (std::size_t idx : coords) {
      const double orig = p[idx];
      p[idx] = orig + h;
      const double up = ref.loss(ds);
      p[idx] = orig - h;
      const double down = ref.loss(ds);
      p[idx] = orig;
      FdSample s;
      s.param = pi;
      s.index = idx;
      s.analytic = named[pi].tensor->grad()[idx];
      s.numeric = (up - down) / (2.0 * h);
      report.samples.push_back(s);
    }
  }
  double scale = 0.0;
  for (const FdSample& s : report.samples) scale = std::max(scale, std::abs(s.analytic));
  const double floor = std::max(relative_floor * scale, 1e-12);
  for (FdSample& s : report.samples) {
    s.rel_error = relative_error(s.analytic, s.numeric, floor);
    report.max_rel_error = std::max(report.max_rel_error, s.rel_error);
  }
  return report;
}

}  // namespace tierprune::testing
