#include "tierprune/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "tierprune/error.hpp"

namespace tierprune::ops {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

std::size_t last_dim(const Shape& s) { return s.back(); }
std::size_t leading_rows(const Shape& s) { return shape_numel(s) / s.back(); }

template <std::size_t N>
Var record(Tape& tape, Tensor out, const std::array<Var, N>& inputs, Tape::BackwardFn fn) {
  return tape.record(std::move(out), std::span<const Var>(inputs), std::move(fn));
}

// out[m x n] = a[m x k] * b[k x n]
void gemm_nn(const float* a, const float* b, float* out, std::size_t m, std::size_t k,
             std::size_t n, std::vector<double>& acc) {
  acc.assign(n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const float* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const float* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
    }
    float* orow = out + i * n;
    for (std::size_t j = 0; j < n; ++j) orow[j] = static_cast<float>(acc[j]);
  }
}

std::vector<float> transpose(const float* src, std::size_t rows, std::size_t cols) {
  std::vector<float> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = src[r * cols + c];
  return t;
}

}  // namespace

Var matmul(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  require(av.rank() == 2 && bv.rank() == 2, "matmul expects 2-D operands");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  require(bv.dim(0) == k, "matmul inner dimensions differ: " + shape_to_string(av.shape()) +
                              " * " + shape_to_string(bv.shape()));
  Tensor out({m, n});
  std::vector<double> acc;
  gemm_nn(av.data(), bv.data(), out.data(), m, k, n, acc);

  return record<2>(tape, std::move(out), {a, b},
                   [a, b, m, k, n](Tape& t, std::span<const float> g) {
                     std::vector<double> acc;
                     const float* av = t.value(a).data();
                     const float* bv = t.value(b).data();
                     if (t.needs_grad(a)) {
                       // dA = G * B^T
                       std::vector<float> bt = transpose(bv, k, n);
                       std::vector<float> da(m * k);
                       gemm_nn(g.data(), bt.data(), da.data(), m, n, k, acc);
                       auto ga = t.grad_buffer(a);
                       for (std::size_t i = 0; i < da.size(); ++i) ga[i] += da[i];
                     }
                     if (t.needs_grad(b)) {
                       // dB = A^T * G
                       std::vector<float> at = transpose(av, m, k);
                       std::vector<float> db(k * n);
                       gemm_nn(at.data(), g.data(), db.data(), k, m, n, acc);
                       auto gb = t.grad_buffer(b);
                       for (std::size_t i = 0; i < db.size(); ++i) gb[i] += db[i];
                     }
                   });
}

Var linear(Tape& tape, Var x, Var weight, Var bias) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(weight);
  const Tensor& bv = tape.value(bias);
  require(wv.rank() == 2, "linear weight must be 2-D");
  const std::size_t out_f = wv.dim(0), in_f = wv.dim(1);
  require(last_dim(xv.shape()) == in_f,
          "linear input " + shape_to_string(xv.shape()) + " does not match weight " +
              shape_to_string(wv.shape()));
  require(bv.numel() == out_f, "linear bias length does not match weight rows");
  const std::size_t rows = leading_rows(xv.shape());

  Shape out_shape = xv.shape();
  out_shape.back() = out_f;
  Tensor out(out_shape);
  std::vector<float> wt = transpose(wv.data(), out_f, in_f);
  std::vector<double> acc;
  gemm_nn(xv.data(), wt.data(), out.data(), rows, in_f, out_f, acc);
  // Bias added after the product in double so a zero weight and zero bias
  // reproduce an all-zero output bit for bit.
  for (std::size_t r = 0; r < rows; ++r) {
    float* orow = out.data() + r * out_f;
    for (std::size_t o = 0; o < out_f; ++o) {
      orow[o] = static_cast<float>(static_cast<double>(orow[o]) + bv[o]);
    }
  }

  return record<3>(
      tape, std::move(out), {x, weight, bias},
      [x, weight, bias, rows, in_f, out_f](Tape& t, std::span<const float> g) {
        std::vector<double> acc;
        if (t.needs_grad(x)) {
          std::vector<float> dx(rows * in_f);
          gemm_nn(g.data(), t.value(weight).data(), dx.data(), rows, out_f, in_f, acc);
          auto gx = t.grad_buffer(x);
          for (std::size_t i = 0; i < dx.size(); ++i) gx[i] += dx[i];
        }
        if (t.needs_grad(weight)) {
          std::vector<float> gt = transpose(g.data(), rows, out_f);
          std::vector<float> dw(out_f * in_f);
          gemm_nn(gt.data(), t.value(x).data(), dw.data(), out_f, rows, in_f, acc);
          auto gw = t.grad_buffer(weight);
          for (std::size_t i = 0; i < dw.size(); ++i) gw[i] += dw[i];
        }
        if (t.needs_grad(bias)) {
          std::vector<double> db(out_f, 0.0);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < out_f; ++o) db[o] += g[r * out_f + o];
          auto gb = t.grad_buffer(bias);
          for (std::size_t o = 0; o < out_f; ++o) gb[o] += static_cast<float>(db[o]);
        }
      });
}

Var add(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  require(av.shape() == bv.shape(), "add shapes differ: " + shape_to_string(av.shape()) +
                                        " vs " + shape_to_string(bv.shape()));
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
  return record<2>(tape, std::move(out), {a, b}, [a, b](Tape& t, std::span<const float> g) {
    for (Var v : {a, b}) {
      if (!t.needs_grad(v)) continue;
      auto gv = t.grad_buffer(v);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

Var add_broadcast(Tape& tape, Var x, Var y) {
  const Tensor& xv = tape.value(x);
  const Tensor& yv = tape.value(y);
  require(yv.rank() <= xv.rank() &&
              std::equal(yv.shape().rbegin(), yv.shape().rend(), xv.shape().rbegin()),
          "add_broadcast: " + shape_to_string(yv.shape()) + " is not a suffix of " +
              shape_to_string(xv.shape()));
  const std::size_t inner = yv.numel();
  const std::size_t outer = xv.numel() / inner;
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = xv[o * inner + i] + yv[i];
  return record<2>(tape, std::move(out), {x, y},
                   [x, y, inner, outer](Tape& t, std::span<const float> g) {
                     if (t.needs_grad(x)) {
                       auto gx = t.grad_buffer(x);
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                     }
                     if (t.needs_grad(y)) {
                       std::vector<double> acc(inner, 0.0);
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t i = 0; i < inner; ++i) acc[i] += g[o * inner + i];
                       auto gy = t.grad_buffer(y);
                       for (std::size_t i = 0; i < inner; ++i) gy[i] += static_cast<float>(acc[i]);
                     }
                   });
}

Var mul(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  require(av.shape() == bv.shape(), "mul shapes differ");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  return record<2>(tape, std::move(out), {a, b}, [a, b](Tape& t, std::span<const float> g) {
    if (t.needs_grad(a)) {
      const Tensor& bv = t.value(b);
      auto ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs_grad(b)) {
      const Tensor& av = t.value(a);
      auto gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Tape& tape, Var x, float factor) {
  const Tensor& xv = tape.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xv[i] * factor;
  return record<1>(tape, std::move(out), {x}, [x, factor](Tape& t, std::span<const float> g) {
    auto gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  });
}

Var sum(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  double acc = 0.0;
  for (float v : xv.values()) acc += v;
  return record<1>(tape, Tensor::scalar(static_cast<float>(acc)), {x},
                   [x](Tape& t, std::span<const float> g) {
                     auto gx = t.grad_buffer(x);
                     for (float& v : gx) v += g[0];
                   });
}

Var reshape(Tape& tape, Var x, Shape shape) {
  Tensor out = tape.value(x).reshaped(std::move(shape));
  out.set_requires_grad(false);
  out.clear_grad();
  return record<1>(tape, std::move(out), {x}, [x](Tape& t, std::span<const float> g) {
    auto gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double v = xv[i];
    out[i] = static_cast<float>(0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v))));
  }
  return record<1>(tape, std::move(out), {x}, [x](Tape& t, std::span<const float> g) {
    const Tensor& xv = t.value(x);
    auto gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv[i];
      const double u = kGeluC * (v + kGeluA * v * v * v);
      const double th = std::tanh(u);
      const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
      gx[i] += static_cast<float>(g[i] * d);
    }
  });
}

Var softmax(Tape& tape, Var x, std::size_t axis) {
  const Tensor& xv = tape.value(x);
  require(axis < xv.rank(), "softmax axis " + std::to_string(axis) + " out of range for " +
                                shape_to_string(xv.shape()));
  const auto& s = xv.shape();
  const std::size_t n = s[axis];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t outer = xv.numel() / (n * inner);

  Tensor out(s);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      float mx = xv[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) total += std::exp(static_cast<double>(xv[base + j * inner]) - mx);
      for (std::size_t j = 0; j < n; ++j) {
        out[base + j * inner] =
            static_cast<float>(std::exp(static_cast<double>(xv[base + j * inner]) - mx) / total);
      }
    }
  }
  Tensor saved = out;
  return record<1>(tape, std::move(out), {x},
                   [x, saved = std::move(saved), n, inner, outer](Tape& t, std::span<const float> g) {
                     auto gx = t.grad_buffer(x);
                     for (std::size_t o = 0; o < outer; ++o) {
                       for (std::size_t in = 0; in < inner; ++in) {
                         const std::size_t base = o * n * inner + in;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < n; ++j)
                           dot += static_cast<double>(g[base + j * inner]) * saved[base + j * inner];
                         for (std::size_t j = 0; j < n; ++j) {
                           const std::size_t idx = base + j * inner;
                           gx[idx] += static_cast<float>(saved[idx] * (g[idx] - dot));
                         }
                       }
                     }
                   });
}

Var layer_norm(Tape& tape, Var x, Var gain, Var bias, float eps) {
  const Tensor& xv = tape.value(x);
  const std::size_t d = last_dim(xv.shape());
  require(d >= 1, "layer_norm needs a nonempty last axis");
  require(tape.value(gain).numel() == d && tape.value(bias).numel() == d,
          "layer_norm gain/bias length must equal the normalized extent");
  const std::size_t rows = leading_rows(xv.shape());
  const Tensor& gv = tape.value(gain);
  const Tensor& bv = tape.value(bias);

  Tensor out(xv.shape());
  std::vector<float> xhat(xv.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mean) * is;
      xhat[r * d + j] = static_cast<float>(h);
      out[r * d + j] = static_cast<float>(h * gv[j] + bv[j]);
    }
  }

  return record<3>(
      tape, std::move(out), {x, gain, bias},
      [x, gain, bias, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape& t, std::span<const float> g) {
        const Tensor& gv = t.value(gain);
        if (t.needs_grad(x)) {
          auto gx = t.grad_buffer(x);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = static_cast<double>(g[r * d + j]) * gv[j];
              mean_dh += dh;
              mean_dh_h += dh * xhat[r * d + j];
            }
            mean_dh /= static_cast<double>(d);
            mean_dh_h /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = static_cast<double>(g[r * d + j]) * gv[j];
              gx[r * d + j] += static_cast<float>(
                  inv_std[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h));
            }
          }
        }
        if (t.needs_grad(gain) || t.needs_grad(bias)) {
          std::vector<double> dg(d, 0.0), db(d, 0.0);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) {
              dg[j] += static_cast<double>(g[r * d + j]) * xhat[r * d + j];
              db[j] += g[r * d + j];
            }
          if (t.needs_grad(gain)) {
            auto gg = t.grad_buffer(gain);
            for (std::size_t j = 0; j < d; ++j) gg[j] += static_cast<float>(dg[j]);
          }
          if (t.needs_grad(bias)) {
            auto gb = t.grad_buffer(bias);
            for (std::size_t j = 0; j < d; ++j) gb[j] += static_cast<float>(db[j]);
          }
        }
      });
}

Var cross_entropy(Tape& tape, Var logits, std::span<const int> labels) {
  const Tensor& lv = tape.value(logits);
  require(lv.rank() == 2, "cross_entropy expects [batch x classes] logits");
  const std::size_t batch = lv.dim(0), classes = lv.dim(1);
  require(labels.size() == batch, "cross_entropy: label count does not match batch size");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw InputError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
  }
  std::vector<float> probs(lv.numel());
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const float* row = lv.data() + b * classes;
    const float mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(static_cast<double>(row[c]) - mx);
    const double lse = mx + std::log(z);
    total += lse - row[labels[b]];
    for (std::size_t c = 0; c < classes; ++c) {
      probs[b * classes + c] = static_cast<float>(std::exp(static_cast<double>(row[c]) - lse));
    }
  }
  const double loss = total / static_cast<double>(batch);
  std::vector<int> saved_labels(labels.begin(), labels.end());
  return record<1>(tape, Tensor::scalar(static_cast<float>(loss)), {logits},
                   [logits, batch, classes, probs = std::move(probs),
                    saved_labels = std::move(saved_labels)](Tape& t, std::span<const float> g) {
                     auto gl = t.grad_buffer(logits);
                     const double s = static_cast<double>(g[0]) / static_cast<double>(batch);
                     for (std::size_t b = 0; b < batch; ++b) {
                       for (std::size_t c = 0; c < classes; ++c) {
                         double p = probs[b * classes + c];
                         if (static_cast<int>(c) == saved_labels[b]) p -= 1.0;
                         gl[b * classes + c] += static_cast<float>(p * s);
                       }
                     }
                   });
}

Var attention(Tape& tape, Var qkv, std::size_t batch, std::size_t tokens, std::size_t heads) {
  const Tensor& qv = tape.value(qkv);
  require(qv.rank() == 2 && qv.dim(0) == batch * tokens && qv.dim(1) % 3 == 0,
          "attention expects [batch*tokens x 3*dim], got " + shape_to_string(qv.shape()));
  const std::size_t dim = qv.dim(1) / 3;
  require(heads >= 1 && dim % heads == 0, "attention: heads must divide the model dimension");
  const std::size_t hd = dim / heads;
  const std::size_t stride = 3 * dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Tensor out({batch * tokens, dim});
  // Attention probabilities [batch][head][query][key], kept for backward.
  std::vector<float> probs(batch * heads * tokens * tokens);
  std::vector<double> row(tokens);
  std::vector<double> acc(hd);
  for (std::size_t b = 0; b < batch; ++b) {
    const float* base = qv.data() + b * tokens * stride;
    for (std::size_t h = 0; h < heads; ++h) {
      float* p = probs.data() + (b * heads + h) * tokens * tokens;
      for (std::size_t i = 0; i < tokens; ++i) {
        const float* q = base + i * stride + h * hd;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < tokens; ++j) {
          const float* k = base + j * stride + dim + h * hd;
          double dot = 0.0;
          for (std::size_t e = 0; e < hd; ++e) dot += static_cast<double>(q[e]) * k[e];
          row[j] = dot * scale;
          mx = std::max(mx, row[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < tokens; ++j) {
          row[j] = std::exp(row[j] - mx);
          z += row[j];
        }
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t j = 0; j < tokens; ++j) {
          const float pj = static_cast<float>(row[j] / z);
          p[i * tokens + j] = pj;
          const float* v = base + j * stride + 2 * dim + h * hd;
          for (std::size_t e = 0; e < hd; ++e) acc[e] += static_cast<double>(pj) * v[e];
        }
        float* o = out.data() + (b * tokens + i) * dim + h * hd;
        for (std::size_t e = 0; e < hd; ++e) o[e] = static_cast<float>(acc[e]);
      }
    }
  }

  return record<1>(
      tape, std::move(out), {qkv},
      [qkv, batch, tokens, heads, dim, hd, stride, scale, probs = std::move(probs)](
          Tape& t, std::span<const float> g) {
        const Tensor& qv = t.value(qkv);
        auto gq = t.grad_buffer(qkv);
        std::vector<double> dp(tokens), ds(tokens);
        std::vector<double> dq(hd);
        // dk/dv accumulate across queries; kept in double per (batch, head).
        std::vector<double> dk(tokens * hd), dv(tokens * hd);
        for (std::size_t b = 0; b < batch; ++b) {
          const float* base = qv.data() + b * tokens * stride;
          float* gbase = gq.data() + b * tokens * stride;
          for (std::size_t h = 0; h < heads; ++h) {
            const float* p = probs.data() + (b * heads + h) * tokens * tokens;
            std::fill(dk.begin(), dk.end(), 0.0);
            std::fill(dv.begin(), dv.end(), 0.0);
            for (std::size_t i = 0; i < tokens; ++i) {
              const float* go = g.data() + (b * tokens + i) * dim + h * hd;
              const float* q = base + i * stride + h * hd;
              double rowdot = 0.0;
              for (std::size_t j = 0; j < tokens; ++j) {
                const float* v = base + j * stride + 2 * dim + h * hd;
                double d = 0.0;
                for (std::size_t e = 0; e < hd; ++e) d += static_cast<double>(go[e]) * v[e];
                dp[j] = d;
                rowdot += d * p[i * tokens + j];
                const double pj = p[i * tokens + j];
                for (std::size_t e = 0; e < hd; ++e) dv[j * hd + e] += pj * go[e];
              }
              std::fill(dq.begin(), dq.end(), 0.0);
              for (std::size_t j = 0; j < tokens; ++j) {
                ds[j] = p[i * tokens + j] * (dp[j] - rowdot) * scale;
                const float* k = base + j * stride + dim + h * hd;
                for (std::size_t e = 0; e < hd; ++e) {
                  dq[e] += ds[j] * k[e];
                  dk[j * hd + e] += ds[j] * q[e];
                }
              }
              float* gqrow = gbase + i * stride + h * hd;
              for (std::size_t e = 0; e < hd; ++e) gqrow[e] += static_cast<float>(dq[e]);
            }
            for (std::size_t j = 0; j < tokens; ++j) {
              float* gk = gbase + j * stride + dim + h * hd;
              float* gv = gbase + j * stride + 2 * dim + h * hd;
              for (std::size_t e = 0; e < hd; ++e) {
                gk[e] += static_cast<float>(dk[j * hd + e]);
                gv[e] += static_cast<float>(dv[j * hd + e]);
              }
            }
          }
        }
      });
}

Var prepend_token(Tape& tape, Var x, Var token) {
  const Tensor& xv = tape.value(x);
  const Tensor& tv = tape.value(token);
  require(xv.rank() == 3, "prepend_token expects [batch x tokens x dim]");
  const std::size_t batch = xv.dim(0), tokens = xv.dim(1), dim = xv.dim(2);
  require(tv.numel() == dim, "prepend_token: token length must equal dim");
  Tensor out({batch, tokens + 1, dim});
  for (std::size_t b = 0; b < batch; ++b) {
    float* dst = out.data() + b * (tokens + 1) * dim;
    std::copy(tv.data(), tv.data() + dim, dst);
    std::copy(xv.data() + b * tokens * dim, xv.data() + (b + 1) * tokens * dim, dst + dim);
  }
  return record<2>(tape, std::move(out), {x, token},
                   [x, token, batch, tokens, dim](Tape& t, std::span<const float> g) {
                     if (t.needs_grad(x)) {
                       auto gx = t.grad_buffer(x);
                       for (std::size_t b = 0; b < batch; ++b)
                         for (std::size_t i = 0; i < tokens * dim; ++i)
                           gx[b * tokens * dim + i] += g[b * (tokens + 1) * dim + dim + i];
                     }
                     if (t.needs_grad(token)) {
                       std::vector<double> acc(dim, 0.0);
                       for (std::size_t b = 0; b < batch; ++b)
                         for (std::size_t e = 0; e < dim; ++e) acc[e] += g[b * (tokens + 1) * dim + e];
                       auto gt = t.grad_buffer(token);
                       for (std::size_t e = 0; e < dim; ++e) gt[e] += static_cast<float>(acc[e]);
                     }
                   });
}

Var select_token(Tape& tape, Var x, std::size_t index) {
  const Tensor& xv = tape.value(x);
  require(xv.rank() == 3, "select_token expects [batch x tokens x dim]");
  const std::size_t batch = xv.dim(0), tokens = xv.dim(1), dim = xv.dim(2);
  require(index < tokens, "select_token index out of range");
  Tensor out({batch, dim});
  for (std::size_t b = 0; b < batch; ++b) {
    const float* src = xv.data() + (b * tokens + index) * dim;
    std::copy(src, src + dim, out.data() + b * dim);
  }
  return record<1>(tape, std::move(out), {x},
                   [x, batch, tokens, dim, index](Tape& t, std::span<const float> g) {
                     auto gx = t.grad_buffer(x);
                     for (std::size_t b = 0; b < batch; ++b)
                       for (std::size_t e = 0; e < dim; ++e)
                         gx[(b * tokens + index) * dim + e] += g[b * dim + e];
                   });
}

}  // namespace tierprune::ops
