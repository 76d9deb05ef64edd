#include "polypforge/nn/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "polypforge/error.hpp"

namespace polypforge::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

void accumulate(Node& input, const Tensor& delta) {
  if (!input.requires_grad) return;
  Tensor& g = input.grad_buffer();
  for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += delta[i];
}

void require_4d(const Var& x, const char* op) {
  require(x.defined() && x.value().rank() == 4, ErrorKind::size_mismatch,
          std::string(op) + " expects an NCHW tensor, got " +
              (x.defined() ? shape_string(x.shape()) : std::string("undefined")));
}

struct ConvGeom {
  std::int64_t n, c, h, w, cout, k, stride, pad, ho, wo;
  PadMode mode;
  std::int64_t patch() const { return c * k * k; }
  std::int64_t plane() const { return ho * wo; }
};

inline std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (i < 0) i = -i;
  if (i >= n) i = 2 * (n - 1) - i;
  return i;
}

// Writes the [patch, nb*plane] column matrix for samples [n0, n0 + nb).
void im2col(const double* x, const ConvGeom& g, std::int64_t n0, std::int64_t nb, double* cols) {
  const std::int64_t plane = g.plane();
  const std::int64_t width = nb * plane;
  for (std::int64_t c = 0; c < g.c; ++c) {
    for (std::int64_t ki = 0; ki < g.k; ++ki) {
      for (std::int64_t kj = 0; kj < g.k; ++kj) {
        double* dst = cols + ((c * g.k + ki) * g.k + kj) * width;
        for (std::int64_t b = 0; b < nb; ++b) {
          const double* src = x + ((n0 + b) * g.c + c) * g.h * g.w;
          double* row = dst + b * plane;
          for (std::int64_t oy = 0; oy < g.ho; ++oy) {
            std::int64_t iy = oy * g.stride - g.pad + ki;
            double* out = row + oy * g.wo;
            if (iy < 0 || iy >= g.h) {
              if (g.mode == PadMode::zeros) {
                std::fill(out, out + g.wo, 0.0);
                continue;
              }
              iy = reflect_index(iy, g.h);
            }
            const double* line = src + iy * g.w;
            for (std::int64_t ox = 0; ox < g.wo; ++ox) {
              std::int64_t ix = ox * g.stride - g.pad + kj;
              if (ix < 0 || ix >= g.w) {
                if (g.mode == PadMode::zeros) {
                  out[ox] = 0.0;
                  continue;
                }
                ix = reflect_index(ix, g.w);
              }
              out[ox] = line[ix];
            }
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvGeom& g, std::int64_t n0, std::int64_t nb, double* dx) {
  const std::int64_t plane = g.plane();
  const std::int64_t width = nb * plane;
  for (std::int64_t c = 0; c < g.c; ++c) {
    for (std::int64_t ki = 0; ki < g.k; ++ki) {
      for (std::int64_t kj = 0; kj < g.k; ++kj) {
        const double* src = cols + ((c * g.k + ki) * g.k + kj) * width;
        for (std::int64_t b = 0; b < nb; ++b) {
          double* img = dx + ((n0 + b) * g.c + c) * g.h * g.w;
          const double* row = src + b * plane;
          for (std::int64_t oy = 0; oy < g.ho; ++oy) {
            std::int64_t iy = oy * g.stride - g.pad + ki;
            if (iy < 0 || iy >= g.h) {
              if (g.mode == PadMode::zeros) continue;
              iy = reflect_index(iy, g.h);
            }
            double* line = img + iy * g.w;
            const double* in = row + oy * g.wo;
            for (std::int64_t ox = 0; ox < g.wo; ++ox) {
              std::int64_t ix = ox * g.stride - g.pad + kj;
              if (ix < 0 || ix >= g.w) {
                if (g.mode == PadMode::zeros) continue;
                ix = reflect_index(ix, g.w);
              }
              line[ix] += in[ox];
            }
          }
        }
      }
    }
  }
}

// Samples per im2col chunk, bounding the column buffer to ~4M doubles.
std::int64_t chunk_size(const ConvGeom& g) {
  const std::int64_t per_sample = std::max<std::int64_t>(1, g.patch() * g.plane());
  return std::clamp<std::int64_t>((std::int64_t{1} << 22) / per_sample, 1, g.n);
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvOptions& opts) {
  require_4d(x, "conv2d");
  require(weight.defined() && weight.value().rank() == 4, ErrorKind::size_mismatch,
          "conv2d weight must be [Cout, Cin, k, k]");
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  ConvGeom g{};
  g.n = xv.dim(0);
  g.c = xv.dim(1);
  g.h = xv.dim(2);
  g.w = xv.dim(3);
  g.cout = wv.dim(0);
  g.k = wv.dim(2);
  g.stride = opts.stride;
  g.pad = opts.padding;
  g.mode = opts.pad_mode;
  require(wv.dim(1) == g.c && wv.dim(3) == g.k, ErrorKind::size_mismatch,
          "conv2d channel mismatch: input " + shape_string(xv.shape()) + ", weight " +
              shape_string(wv.shape()));
  require(opts.stride >= 1 && opts.padding >= 0, ErrorKind::invalid_argument,
          "conv2d stride must be >= 1 and padding >= 0");
  require(g.mode == PadMode::zeros || (g.pad < g.h && g.pad < g.w), ErrorKind::size_mismatch,
          "reflection padding must be smaller than the input");
  require(g.h + 2 * g.pad >= g.k && g.w + 2 * g.pad >= g.k, ErrorKind::size_mismatch,
          "conv2d kernel larger than padded input " + shape_string(xv.shape()));
  g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  if (bias.defined()) {
    require(bias.value().numel() == g.cout, ErrorKind::size_mismatch, "conv2d bias length");
  }

  const std::int64_t plane = g.plane();
  const std::int64_t patch = g.patch();
  const std::int64_t chunk = chunk_size(g);
  Tensor out({g.n, g.cout, g.ho, g.wo});
  // im2col writes every entry, so the buffer is left uninitialized.
  std::unique_ptr<double[]> cols(new double[static_cast<std::size_t>(patch * chunk * plane)]);
  RowMat y;
  CMapRM wm(wv.data(), g.cout, patch);
  for (std::int64_t n0 = 0; n0 < g.n; n0 += chunk) {
    const std::int64_t nb = std::min(chunk, g.n - n0);
    im2col(xv.data(), g, n0, nb, cols.get());
    CMapRM cm(cols.get(), patch, nb * plane);
    // One product per sample keeps each output independent of its position
    // in the batch.
    y.resize(g.cout, nb * plane);
    for (std::int64_t b = 0; b < nb; ++b) {
      y.middleCols(b * plane, plane).noalias() = wm * cm.middleCols(b * plane, plane);
    }
    for (std::int64_t b = 0; b < nb; ++b) {
      for (std::int64_t co = 0; co < g.cout; ++co) {
        const double shift = bias.defined() ? bias.value()[co] : 0.0;
        double* dst = out.data() + ((n0 + b) * g.cout + co) * plane;
        const double* src = y.data() + co * nb * plane + b * plane;
        for (std::int64_t p = 0; p < plane; ++p) dst[p] = src[p] + shift;
      }
    }
  }

  return Var::from_op(std::move(out), {x, weight, bias.defined() ? bias : Var()},
                      [g, chunk](Node& self) {
    Node& xn = *self.inputs[0];
    Node& wn = *self.inputs[1];
    Node* bn = self.inputs[2] ? self.inputs[2].get() : nullptr;
    const std::int64_t plane = g.plane();
    const std::int64_t patch = g.patch();
    std::unique_ptr<double[]> cols(new double[static_cast<std::size_t>(patch * chunk * plane)]);
    RowMat grad_out(g.cout, chunk * plane);
    CMapRM wm(wn.value.data(), g.cout, patch);
    RowMat dcols;
    for (std::int64_t n0 = 0; n0 < g.n; n0 += chunk) {
      const std::int64_t nb = std::min(chunk, g.n - n0);
      auto go = grad_out.leftCols(nb * plane);
      for (std::int64_t b = 0; b < nb; ++b) {
        for (std::int64_t co = 0; co < g.cout; ++co) {
          const double* src = self.grad.data() + ((n0 + b) * g.cout + co) * plane;
          for (std::int64_t p = 0; p < plane; ++p) go(co, b * plane + p) = src[p];
        }
      }
      if (wn.requires_grad) {
        im2col(xn.value.data(), g, n0, nb, cols.get());
        CMapRM cm(cols.get(), patch, nb * plane);
        MapRM dw(wn.grad_buffer().data(), g.cout, patch);
        dw.noalias() += go * cm.transpose();
      }
      if (bn && bn->requires_grad) {
        Tensor& db = bn->grad_buffer();
        for (std::int64_t co = 0; co < g.cout; ++co) db[co] += go.row(co).sum();
      }
      if (xn.requires_grad) {
        dcols.noalias() = wm.transpose() * go;
        col2im(dcols.data(), g, n0, nb, xn.grad_buffer().data());
      }
    }
  });
}

Var upsample_nearest(const Var& x, int factor) {
  require_4d(x, "upsample_nearest");
  require(factor >= 1, ErrorKind::invalid_argument, "upsample factor must be >= 1");
  const Tensor& xv = x.value();
  const std::int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::int64_t f = factor;
  Tensor out({n, c, h * f, w * f});
  for (std::int64_t i = 0; i < n * c; ++i) {
    const double* src = xv.data() + i * h * w;
    double* dst = out.data() + i * h * w * f * f;
    for (std::int64_t y = 0; y < h * f; ++y) {
      for (std::int64_t xx = 0; xx < w * f; ++xx) dst[y * w * f + xx] = src[(y / f) * w + xx / f];
    }
  }
  return Var::from_op(std::move(out), {x}, [n, c, h, w, f](Node& self) {
    Node& xn = *self.inputs[0];
    Tensor& dx = xn.grad_buffer();
    for (std::int64_t i = 0; i < n * c; ++i) {
      const double* src = self.grad.data() + i * h * w * f * f;
      double* dst = dx.data() + i * h * w;
      for (std::int64_t y = 0; y < h * f; ++y) {
        for (std::int64_t xx = 0; xx < w * f; ++xx) dst[(y / f) * w + xx / f] += src[y * w * f + xx];
      }
    }
  });
}

namespace {

// Normalized activations and inverse deviations kept for the backward pass.
struct NormSaved {
  Tensor xhat;
  std::vector<double> inv_std;
};

}  // namespace

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require_4d(x, "instance_norm");
  const Tensor& xv = x.value();
  const std::int64_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  auto saved = std::make_shared<NormSaved>();
  saved->xhat = Tensor(xv.shape());
  saved->inv_std.resize(static_cast<std::size_t>(n * c));
  Tensor out(xv.shape());
  for (std::int64_t i = 0; i < n * c; ++i) {
    const double* src = xv.data() + i * hw;
    double mean = 0.0;
    for (std::int64_t p = 0; p < hw; ++p) mean += src[p];
    mean /= static_cast<double>(hw);
    double var = 0.0;
    for (std::int64_t p = 0; p < hw; ++p) var += (src[p] - mean) * (src[p] - mean);
    var /= static_cast<double>(hw);
    const double inv = 1.0 / std::sqrt(var + eps);
    saved->inv_std[static_cast<std::size_t>(i)] = inv;
    const std::int64_t ch = i % c;
    const double gm = gamma.defined() ? gamma.value()[ch] : 1.0;
    const double bt = beta.defined() ? beta.value()[ch] : 0.0;
    double* xh = saved->xhat.data() + i * hw;
    double* dst = out.data() + i * hw;
    for (std::int64_t p = 0; p < hw; ++p) {
      xh[p] = (src[p] - mean) * inv;
      dst[p] = gm * xh[p] + bt;
    }
  }
  return Var::from_op(std::move(out), {x, gamma, beta}, [saved, n, c, hw](Node& self) {
    Node& xn = *self.inputs[0];
    Node* gn = self.inputs[1].get();
    Node* bn = self.inputs[2].get();
    for (std::int64_t i = 0; i < n * c; ++i) {
      const std::int64_t ch = i % c;
      const double* dy = self.grad.data() + i * hw;
      const double* xh = saved->xhat.data() + i * hw;
      double sum_dy = 0.0, sum_dy_xh = 0.0;
      for (std::int64_t p = 0; p < hw; ++p) {
        sum_dy += dy[p];
        sum_dy_xh += dy[p] * xh[p];
      }
      if (gn && gn->requires_grad) gn->grad_buffer()[ch] += sum_dy_xh;
      if (bn && bn->requires_grad) bn->grad_buffer()[ch] += sum_dy;
      if (xn.requires_grad) {
        const double gm = gn ? gn->value[ch] : 1.0;
        const double inv = saved->inv_std[static_cast<std::size_t>(i)];
        const double m_dy = sum_dy / static_cast<double>(hw);
        const double m_dyxh = sum_dy_xh / static_cast<double>(hw);
        double* dx = xn.grad_buffer().data() + i * hw;
        for (std::int64_t p = 0; p < hw; ++p) dx[p] += gm * inv * (dy[p] - m_dy - xh[p] * m_dyxh);
      }
    }
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, const BatchNormState& state) {
  require_4d(x, "batch_norm");
  const Tensor& xv = x.value();
  const std::int64_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  const std::int64_t count = n * hw;
  auto saved = std::make_shared<NormSaved>();
  saved->xhat = Tensor(xv.shape());
  saved->inv_std.resize(static_cast<std::size_t>(c));
  Tensor out(xv.shape());
  const bool batch_stats = state.use_batch_stats;
  if (batch_stats) {
    require(count > 1, ErrorKind::size_mismatch, "batch_norm needs more than one value per channel");
  } else {
    require(state.running_mean && state.running_var, ErrorKind::invalid_argument,
            "batch_norm eval mode needs running statistics");
  }
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double mean = 0.0, var = 0.0;
    if (batch_stats) {
      for (std::int64_t s = 0; s < n; ++s) {
        const double* src = xv.data() + (s * c + ch) * hw;
        for (std::int64_t p = 0; p < hw; ++p) mean += src[p];
      }
      mean /= static_cast<double>(count);
      for (std::int64_t s = 0; s < n; ++s) {
        const double* src = xv.data() + (s * c + ch) * hw;
        for (std::int64_t p = 0; p < hw; ++p) var += (src[p] - mean) * (src[p] - mean);
      }
      var /= static_cast<double>(count);
      if (state.update_running && state.running_mean && state.running_var) {
        const double m = state.momentum;
        (*state.running_mean)[ch] = (1.0 - m) * (*state.running_mean)[ch] + m * mean;
        const double unbiased = var * static_cast<double>(count) / static_cast<double>(count - 1);
        (*state.running_var)[ch] = (1.0 - m) * (*state.running_var)[ch] + m * unbiased;
      }
    } else {
      mean = (*state.running_mean)[ch];
      var = (*state.running_var)[ch];
    }
    const double inv = 1.0 / std::sqrt(var + state.eps);
    saved->inv_std[static_cast<std::size_t>(ch)] = inv;
    const double gm = gamma.defined() ? gamma.value()[ch] : 1.0;
    const double bt = beta.defined() ? beta.value()[ch] : 0.0;
    for (std::int64_t s = 0; s < n; ++s) {
      const std::int64_t off = (s * c + ch) * hw;
      for (std::int64_t p = 0; p < hw; ++p) {
        const double xh = (xv[off + p] - mean) * inv;
        saved->xhat[off + p] = xh;
        out[off + p] = gm * xh + bt;
      }
    }
  }
  return Var::from_op(std::move(out), {x, gamma, beta},
                      [saved, n, c, hw, count, batch_stats](Node& self) {
    Node& xn = *self.inputs[0];
    Node* gn = self.inputs[1].get();
    Node* bn = self.inputs[2].get();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double sum_dy = 0.0, sum_dy_xh = 0.0;
      for (std::int64_t s = 0; s < n; ++s) {
        const std::int64_t off = (s * c + ch) * hw;
        for (std::int64_t p = 0; p < hw; ++p) {
          sum_dy += self.grad[off + p];
          sum_dy_xh += self.grad[off + p] * saved->xhat[off + p];
        }
      }
      if (gn && gn->requires_grad) gn->grad_buffer()[ch] += sum_dy_xh;
      if (bn && bn->requires_grad) bn->grad_buffer()[ch] += sum_dy;
      if (!xn.requires_grad) continue;
      const double gm = gn ? gn->value[ch] : 1.0;
      const double inv = saved->inv_std[static_cast<std::size_t>(ch)];
      const double m_dy = batch_stats ? sum_dy / static_cast<double>(count) : 0.0;
      const double m_dyxh = batch_stats ? sum_dy_xh / static_cast<double>(count) : 0.0;
      Tensor& dx = xn.grad_buffer();
      for (std::int64_t s = 0; s < n; ++s) {
        const std::int64_t off = (s * c + ch) * hw;
        for (std::int64_t p = 0; p < hw; ++p) {
          dx[off + p] += gm * inv * (self.grad[off + p] - m_dy - saved->xhat[off + p] * m_dyxh);
        }
      }
    }
  });
}

Var relu(const Var& x) { return leaky_relu(x, 0.0); }

Var leaky_relu(const Var& x, double slope) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::int64_t i = 0; i < xv.numel(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : slope * xv[i];
  return Var::from_op(std::move(out), {x}, [slope](Node& self) {
    Node& xn = *self.inputs[0];
    Tensor& dx = xn.grad_buffer();
    for (std::int64_t i = 0; i < dx.numel(); ++i) {
      dx[i] += xn.value[i] > 0.0 ? self.grad[i] : slope * self.grad[i];
    }
  });
}

Var tanh(const Var& x) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::int64_t i = 0; i < xv.numel(); ++i) out[i] = std::tanh(xv[i]);
  return Var::from_op(std::move(out), {x}, [](Node& self) {
    Node& xn = *self.inputs[0];
    Tensor& dx = xn.grad_buffer();
    for (std::int64_t i = 0; i < dx.numel(); ++i) {
      const double t = self.value[i];
      dx[i] += self.grad[i] * (1.0 - t * t);
    }
  });
}

Var add(const Var& a, const Var& b) {
  require(a.shape() == b.shape(), ErrorKind::size_mismatch,
          "add shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  return Var::from_op(std::move(out), {a, b}, [](Node& self) {
    accumulate(*self.inputs[0], self.grad);
    accumulate(*self.inputs[1], self.grad);
  });
}

Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }

Var scale(const Var& a, double s) {
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = s * a.value()[i];
  return Var::from_op(std::move(out), {a}, [s](Node& self) {
    Node& an = *self.inputs[0];
    if (!an.requires_grad) return;
    Tensor& da = an.grad_buffer();
    for (std::int64_t i = 0; i < da.numel(); ++i) da[i] += s * self.grad[i];
  });
}

Var weighted_sum(std::span<const Var> terms, std::span<const double> weights) {
  require(terms.size() == weights.size() && !terms.empty(), ErrorKind::invalid_argument,
          "weighted_sum needs one weight per term");
  double total = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) total += weights[i] * terms[i].item();
  std::vector<double> w(weights.begin(), weights.end());
  return Var::from_op(Tensor({1}, total), std::vector<Var>(terms.begin(), terms.end()),
                      [w](Node& self) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      Node& t = *self.inputs[i];
      if (t.requires_grad) t.grad_buffer()[0] += w[i] * self.grad[0];
    }
  });
}

Var max_pool2d(const Var& x, int kernel, int stride, int padding) {
  require_4d(x, "max_pool2d");
  const Tensor& xv = x.value();
  const std::int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::int64_t ho = (h + 2 * padding - kernel) / stride + 1;
  const std::int64_t wo = (w + 2 * padding - kernel) / stride + 1;
  require(ho >= 1 && wo >= 1, ErrorKind::size_mismatch, "max_pool2d input too small");
  Tensor out({n, c, ho, wo});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(out.numel()));
  for (std::int64_t i = 0; i < n * c; ++i) {
    const double* src = xv.data() + i * h * w;
    for (std::int64_t oy = 0; oy < ho; ++oy) {
      for (std::int64_t ox = 0; ox < wo; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::int64_t best_idx = -1;
        for (int ki = 0; ki < kernel; ++ki) {
          const std::int64_t iy = oy * stride - padding + ki;
          if (iy < 0 || iy >= h) continue;
          for (int kj = 0; kj < kernel; ++kj) {
            const std::int64_t ix = ox * stride - padding + kj;
            if (ix < 0 || ix >= w) continue;
            if (src[iy * w + ix] > best) {
              best = src[iy * w + ix];
              best_idx = iy * w + ix;
            }
          }
        }
        const std::int64_t o = (i * ho + oy) * wo + ox;
        out[o] = best;
        (*argmax)[static_cast<std::size_t>(o)] = i * h * w + best_idx;
      }
    }
  }
  return Var::from_op(std::move(out), {x}, [argmax](Node& self) {
    Tensor& dx = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < argmax->size(); ++o) {
      dx[(*argmax)[o]] += self.grad[static_cast<std::int64_t>(o)];
    }
  });
}

Var global_avg_pool(const Var& x) {
  require_4d(x, "global_avg_pool");
  const Tensor& xv = x.value();
  const std::int64_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  Tensor out({n, c});
  for (std::int64_t i = 0; i < n * c; ++i) {
    double s = 0.0;
    for (std::int64_t p = 0; p < hw; ++p) s += xv[i * hw + p];
    out[i] = s / static_cast<double>(hw);
  }
  return Var::from_op(std::move(out), {x}, [n, c, hw](Node& self) {
    Tensor& dx = self.inputs[0]->grad_buffer();
    for (std::int64_t i = 0; i < n * c; ++i) {
      const double g = self.grad[i] / static_cast<double>(hw);
      for (std::int64_t p = 0; p < hw; ++p) dx[i * hw + p] += g;
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return Var::from_op(std::move(out), {x}, [](Node& self) {
    accumulate(*self.inputs[0], self.grad);
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require(x.value().rank() == 2 && weight.value().rank() == 2 &&
              x.value().dim(1) == weight.value().dim(1),
          ErrorKind::size_mismatch,
          "linear shape mismatch " + shape_string(x.shape()) + " x " + shape_string(weight.shape()));
  const std::int64_t n = x.value().dim(0), k = x.value().dim(1), m = weight.value().dim(0);
  Tensor out({n, m});
  MapRM y(out.data(), n, m);
  CMapRM xm(x.value().data(), n, k);
  CMapRM wm(weight.value().data(), m, k);
  for (std::int64_t r = 0; r < n; ++r) y.row(r).noalias() = xm.row(r) * wm.transpose();
  if (bias.defined()) {
    for (std::int64_t r = 0; r < n; ++r) {
      for (std::int64_t j = 0; j < m; ++j) y(r, j) += bias.value()[j];
    }
  }
  return Var::from_op(std::move(out), {x, weight, bias}, [n, k, m](Node& self) {
    Node& xn = *self.inputs[0];
    Node& wn = *self.inputs[1];
    Node* bn = self.inputs[2].get();
    CMapRM gy(self.grad.data(), n, m);
    if (xn.requires_grad) {
      MapRM dx(xn.grad_buffer().data(), n, k);
      dx.noalias() += gy * CMapRM(wn.value.data(), m, k);
    }
    if (wn.requires_grad) {
      MapRM dw(wn.grad_buffer().data(), m, k);
      dw.noalias() += gy.transpose() * CMapRM(xn.value.data(), n, k);
    }
    if (bn && bn->requires_grad) {
      Tensor& db = bn->grad_buffer();
      for (std::int64_t j = 0; j < m; ++j) db[j] += gy.col(j).sum();
    }
  });
}

Tensor softmax_rows(const Tensor& logits) {
  require(logits.rank() == 2, ErrorKind::size_mismatch, "softmax_rows expects [N, C]");
  const std::int64_t n = logits.dim(0), c = logits.dim(1);
  Tensor out(logits.shape());
  for (std::int64_t r = 0; r < n; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < c; ++j) mx = std::max(mx, logits[r * c + j]);
    double s = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
      out[r * c + j] = std::exp(logits[r * c + j] - mx);
      s += out[r * c + j];
    }
    for (std::int64_t j = 0; j < c; ++j) out[r * c + j] /= s;
  }
  return out;
}

Var cross_entropy(const Var& logits, std::span<const int> labels,
                  std::span<const double> class_weights) {
  const Tensor& lv = logits.value();
  require(lv.rank() == 2 && lv.dim(0) == static_cast<std::int64_t>(labels.size()),
          ErrorKind::size_mismatch, "cross_entropy expects [N, C] logits and N labels");
  const std::int64_t n = lv.dim(0), c = lv.dim(1);
  require(class_weights.empty() || static_cast<std::int64_t>(class_weights.size()) == c,
          ErrorKind::size_mismatch, "cross_entropy class weight count");
  auto probs = std::make_shared<Tensor>(softmax_rows(lv));
  std::vector<int> y(labels.begin(), labels.end());
  std::vector<double> w(static_cast<std::size_t>(n), 1.0);
  double total_w = 0.0, loss = 0.0;
  for (std::int64_t r = 0; r < n; ++r) {
    require(y[r] >= 0 && y[r] < c, ErrorKind::invalid_argument, "label index out of range");
    if (!class_weights.empty()) w[r] = class_weights[y[r]];
    total_w += w[r];
    loss -= w[r] * std::log(std::max((*probs)[r * c + y[r]], 1e-300));
  }
  require(total_w > 0.0, ErrorKind::invalid_argument, "cross_entropy total weight is zero");
  loss /= total_w;
  return Var::from_op(Tensor({1}, loss), {logits}, [probs, y, w, total_w, n, c](Node& self) {
    Tensor& dl = self.inputs[0]->grad_buffer();
    const double g = self.grad[0] / total_w;
    for (std::int64_t r = 0; r < n; ++r) {
      for (std::int64_t j = 0; j < c; ++j) {
        const double target = j == y[r] ? 1.0 : 0.0;
        dl[r * c + j] += g * w[r] * ((*probs)[r * c + j] - target);
      }
    }
  });
}

Var mse_to(const Var& x, double target) {
  const Tensor& xv = x.value();
  require(xv.numel() > 0, ErrorKind::empty_input, "mse of empty tensor");
  double s = 0.0;
  for (std::int64_t i = 0; i < xv.numel(); ++i) s += (xv[i] - target) * (xv[i] - target);
  const double m = static_cast<double>(xv.numel());
  return Var::from_op(Tensor({1}, s / m), {x}, [target, m](Node& self) {
    Node& xn = *self.inputs[0];
    Tensor& dx = xn.grad_buffer();
    const double g = 2.0 * self.grad[0] / m;
    for (std::int64_t i = 0; i < dx.numel(); ++i) dx[i] += g * (xn.value[i] - target);
  });
}

Var l1_loss(const Var& a, const Var& b) {
  require(a.shape() == b.shape(), ErrorKind::size_mismatch,
          "l1_loss shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  require(a.value().numel() > 0, ErrorKind::empty_input, "l1_loss of empty tensors");
  double s = 0.0;
  for (std::int64_t i = 0; i < a.value().numel(); ++i) s += std::abs(a.value()[i] - b.value()[i]);
  const double m = static_cast<double>(a.value().numel());
  return Var::from_op(Tensor({1}, s / m), {a, b}, [m](Node& self) {
    Node& an = *self.inputs[0];
    Node& bn = *self.inputs[1];
    const double g = self.grad[0] / m;
    for (std::int64_t i = 0; i < an.value.numel(); ++i) {
      const double d = an.value[i] - bn.value[i];
      const double sg = d > 0.0 ? g : (d < 0.0 ? -g : 0.0);
      if (an.requires_grad) an.grad_buffer()[i] += sg;
      if (bn.requires_grad) bn.grad_buffer()[i] -= sg;
    }
  });
}

Var bce_with_logits(const Var& logits, double target) {
  const Tensor& xv = logits.value();
  require(xv.numel() > 0, ErrorKind::empty_input, "bce of empty tensor");
  double s = 0.0;
  for (std::int64_t i = 0; i < xv.numel(); ++i) {
    const double v = xv[i];
    s += std::max(v, 0.0) - v * target + std::log1p(std::exp(-std::abs(v)));
  }
  const double m = static_cast<double>(xv.numel());
  return Var::from_op(Tensor({1}, s / m), {logits}, [target, m](Node& self) {
    Node& xn = *self.inputs[0];
    Tensor& dx = xn.grad_buffer();
    const double g = self.grad[0] / m;
    for (std::int64_t i = 0; i < dx.numel(); ++i) {
      const double sig = 1.0 / (1.0 + std::exp(-xn.value[i]));
      dx[i] += g * (sig - target);
    }
  });
}

}  // namespace polypforge::nn
