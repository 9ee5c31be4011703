#pragma once

#include <cstddef>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace quesnet {

// ---- matrix slicing ----

inline Tensor slice_row(const Tensor& a, std::size_t r) {
  if (a.ndim() != 2 || r >= a.dim(0))
    throw IndexError("slice_row: row " + std::to_string(r) + " out of " +
                     shape_str(a.shape()));
  std::size_t n = a.dim(1);
  std::vector<double> v(a.data().begin() + r * n,
                        a.data().begin() + (r + 1) * n);
  return detail::make_op({n}, std::move(v), detail::recording({&a}), {a},
                         [r, n](detail::Node& node) {
                           auto& pa = *node.parents[0];
                           if (!pa.requires_grad) return;
                           pa.ensure_grad();
                           for (std::size_t i = 0; i < n; ++i)
                             pa.grad[r * n + i] += node.grad[i];
                         });
}

inline Tensor slice_cols(const Tensor& a, std::size_t off, std::size_t len) {
  if (a.ndim() != 2 || off + len > a.dim(1))
    throw DimensionError("slice_cols: columns [" + std::to_string(off) + ", " +
                         std::to_string(off + len) + ") out of " +
                         shape_str(a.shape()));
  std::size_t t = a.dim(0), w = a.dim(1);
  std::vector<double> v(t * len);
  for (std::size_t i = 0; i < t; ++i)
    std::copy_n(a.data().data() + i * w + off, len, v.data() + i * len);
  return detail::make_op({t, len}, std::move(v), detail::recording({&a}), {a},
                         [off, len, t, w](detail::Node& node) {
                           auto& pa = *node.parents[0];
                           if (!pa.requires_grad) return;
                           pa.ensure_grad();
                           for (std::size_t i = 0; i < t; ++i)
                             for (std::size_t j = 0; j < len; ++j)
                               pa.grad[i * w + off + j] +=
                                   node.grad[i * len + j];
                         });
}

// Same elements under a new shape; gradient passes through unchanged.
inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) +
                         " as " + shape_str(shape));
  std::vector<double> v = a.data();
  return detail::make_op(std::move(shape), std::move(v),
                         detail::recording({&a}), {a},
                         [](detail::Node& node) {
                           auto& pa = *node.parents[0];
                           if (!pa.requires_grad) return;
                           pa.ensure_grad();
                           for (std::size_t i = 0; i < node.grad.size(); ++i)
                             pa.grad[i] += node.grad[i];
                         });
}

// ---- embedding lookup ----

inline Tensor embedding_row(const Tensor& table, std::size_t idx) {
  if (table.ndim() != 2)
    throw DimensionError("embedding_row: table must be 2-d, got " +
                         shape_str(table.shape()));
  if (idx >= table.dim(0))
    throw IndexError("embedding_row: index " + std::to_string(idx) +
                     " out of " + std::to_string(table.dim(0)) + " rows");
  return slice_row(table, idx);
}

// ---- convolution ----

namespace detail {

// Plain cross-correlation on raw arrays; shared by conv2d forward and the
// transposed op's backward.
inline void conv_fwd(const double* x, std::size_t ci, std::size_t h,
                     std::size_t w, const double* k, std::size_t co,
                     std::size_t kh, std::size_t kw, std::size_t s,
                     std::size_t p, std::size_t ho, std::size_t wo,
                     double* y) {
  std::fill(y, y + co * ho * wo, 0.0);
  for (std::size_t oc = 0; oc < co; ++oc)
    for (std::size_t ic = 0; ic < ci; ++ic) {
      const double* xi = x + ic * h * w;
      const double* kk = k + (oc * ci + ic) * kh * kw;
      double* yo = y + oc * ho * wo;
      for (std::size_t oh = 0; oh < ho; ++oh)
        for (std::size_t ow = 0; ow < wo; ++ow) {
          double acc = 0.0;
          for (std::size_t r = 0; r < kh; ++r) {
            std::ptrdiff_t ih =
                static_cast<std::ptrdiff_t>(oh * s + r) -
                static_cast<std::ptrdiff_t>(p);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t c = 0; c < kw; ++c) {
              std::ptrdiff_t iw =
                  static_cast<std::ptrdiff_t>(ow * s + c) -
                  static_cast<std::ptrdiff_t>(p);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
              acc += xi[ih * w + iw] * kk[r * kw + c];
            }
          }
          yo[oh * wo + ow] += acc;
        }
    }
}

// Gradient w.r.t. the convolution input; also the transposed op's forward.
inline void conv_din(const double* dy, std::size_t co, std::size_t ho,
                     std::size_t wo, const double* k, std::size_t ci,
                     std::size_t kh, std::size_t kw, std::size_t s,
                     std::size_t p, std::size_t h, std::size_t w,
                     double* dx) {
  std::fill(dx, dx + ci * h * w, 0.0);
  for (std::size_t oc = 0; oc < co; ++oc)
    for (std::size_t ic = 0; ic < ci; ++ic) {
      const double* dyo = dy + oc * ho * wo;
      const double* kk = k + (oc * ci + ic) * kh * kw;
      double* dxi = dx + ic * h * w;
      for (std::size_t oh = 0; oh < ho; ++oh)
        for (std::size_t ow = 0; ow < wo; ++ow) {
          double g = dyo[oh * wo + ow];
          if (g == 0.0) continue;
          for (std::size_t r = 0; r < kh; ++r) {
            std::ptrdiff_t ih =
                static_cast<std::ptrdiff_t>(oh * s + r) -
                static_cast<std::ptrdiff_t>(p);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t c = 0; c < kw; ++c) {
              std::ptrdiff_t iw =
                  static_cast<std::ptrdiff_t>(ow * s + c) -
                  static_cast<std::ptrdiff_t>(p);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
              dxi[ih * w + iw] += g * kk[r * kw + c];
            }
          }
        }
    }
}

// Gradient w.r.t. the convolution kernel.
inline void conv_dk(const double* dy, std::size_t co, std::size_t ho,
                    std::size_t wo, const double* x, std::size_t ci,
                    std::size_t h, std::size_t w, std::size_t kh,
                    std::size_t kw, std::size_t s, std::size_t p,
                    double* dk) {
  for (std::size_t oc = 0; oc < co; ++oc)
    for (std::size_t ic = 0; ic < ci; ++ic) {
      const double* dyo = dy + oc * ho * wo;
      const double* xi = x + ic * h * w;
      double* kk = dk + (oc * ci + ic) * kh * kw;
      for (std::size_t oh = 0; oh < ho; ++oh)
        for (std::size_t ow = 0; ow < wo; ++ow) {
          double g = dyo[oh * wo + ow];
          if (g == 0.0) continue;
          for (std::size_t r = 0; r < kh; ++r) {
            std::ptrdiff_t ih =
                static_cast<std::ptrdiff_t>(oh * s + r) -
                static_cast<std::ptrdiff_t>(p);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t c = 0; c < kw; ++c) {
              std::ptrdiff_t iw =
                  static_cast<std::ptrdiff_t>(ow * s + c) -
                  static_cast<std::ptrdiff_t>(p);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
              kk[r * kw + c] += g * xi[ih * w + iw];
            }
          }
        }
    }
}

}  // namespace detail

// x [ci x h x w], kernel [co x ci x kh x kw], bias [co].
// Output [co x ho x wo] with ho = (h + 2p - kh)/s + 1.
inline Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                     std::size_t stride, std::size_t pad) {
  if (x.ndim() != 3 || kernel.ndim() != 4 || x.dim(0) != kernel.dim(1))
    throw DimensionError("conv2d: input " + shape_str(x.shape()) +
                         " does not match kernel " +
                         shape_str(kernel.shape()));
  std::size_t ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::size_t co = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (h + 2 * pad < kh || w + 2 * pad < kw ||
      (h + 2 * pad - kh) % stride != 0 || (w + 2 * pad - kw) % stride != 0)
    throw DimensionError("conv2d: geometry " + shape_str(x.shape()) +
                         " with kernel " + shape_str(kernel.shape()) +
                         ", stride " + std::to_string(stride) + ", pad " +
                         std::to_string(pad) + " does not tile");
  std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  std::size_t wo = (w + 2 * pad - kw) / stride + 1;
  if (bias.ndim() != 1 || bias.dim(0) != co)
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) +
                         " does not match " + std::to_string(co) +
                         " output maps");
  std::vector<double> v(co * ho * wo);
  detail::conv_fwd(x.data().data(), ci, h, w, kernel.data().data(), co, kh,
                   kw, stride, pad, ho, wo, v.data());
  for (std::size_t oc = 0; oc < co; ++oc) {
    double b = bias.data()[oc];
    for (std::size_t i = 0; i < ho * wo; ++i) v[oc * ho * wo + i] += b;
  }
  return detail::make_op(
      {co, ho, wo}, std::move(v), detail::recording({&x, &kernel, &bias}),
      {x, kernel, bias},
      [ci, h, w, co, kh, kw, stride, pad, ho, wo](detail::Node& node) {
        auto& px = *node.parents[0];
        auto& pk = *node.parents[1];
        auto& pb = *node.parents[2];
        const double* g = node.grad.data();
        if (px.requires_grad) {
          px.ensure_grad();
          std::vector<double> dx(ci * h * w);
          detail::conv_din(g, co, ho, wo, pk.value.data(), ci, kh, kw, stride,
                           pad, h, w, dx.data());
          for (std::size_t i = 0; i < dx.size(); ++i) px.grad[i] += dx[i];
        }
        if (pk.requires_grad) {
          pk.ensure_grad();
          detail::conv_dk(g, co, ho, wo, px.value.data(), ci, h, w, kh, kw,
                          stride, pad, pk.grad.data());
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (std::size_t oc = 0; oc < co; ++oc) {
            double s = 0.0;
            for (std::size_t i = 0; i < ho * wo; ++i) s += g[oc * ho * wo + i];
            pb.grad[oc] += s;
          }
        }
      });
}

// Transposed convolution. x [ci x h x w], kernel [ci x co x kh x kw],
// bias [co]. Output [co x ho x wo] with ho = (h - 1) * s - 2p + kh: the
// spatial inverse of conv2d with the same stride and padding.
inline Tensor transposed_conv2d(const Tensor& x, const Tensor& kernel,
                                const Tensor& bias, std::size_t stride,
                                std::size_t pad) {
  if (x.ndim() != 3 || kernel.ndim() != 4 || x.dim(0) != kernel.dim(0))
    throw DimensionError("transposed_conv2d: input " + shape_str(x.shape()) +
                         " does not match kernel " +
                         shape_str(kernel.shape()));
  std::size_t ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::size_t co = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  if ((h - 1) * stride + kh < 2 * pad || (w - 1) * stride + kw < 2 * pad)
    throw DimensionError("transposed_conv2d: geometry underflows with pad " +
                         std::to_string(pad));
  std::size_t ho = (h - 1) * stride + kh - 2 * pad;
  std::size_t wo = (w - 1) * stride + kw - 2 * pad;
  if (bias.ndim() != 1 || bias.dim(0) != co)
    throw DimensionError("transposed_conv2d: bias " +
                         shape_str(bias.shape()) + " does not match " +
                         std::to_string(co) + " output maps");
  std::vector<double> v(co * ho * wo);
  detail::conv_din(x.data().data(), ci, h, w, kernel.data().data(), co, kh,
                   kw, stride, pad, ho, wo, v.data());
  for (std::size_t oc = 0; oc < co; ++oc) {
    double b = bias.data()[oc];
    for (std::size_t i = 0; i < ho * wo; ++i) v[oc * ho * wo + i] += b;
  }
  return detail::make_op(
      {co, ho, wo}, std::move(v), detail::recording({&x, &kernel, &bias}),
      {x, kernel, bias},
      [ci, h, w, co, kh, kw, stride, pad, ho, wo](detail::Node& node) {
        auto& px = *node.parents[0];
        auto& pk = *node.parents[1];
        auto& pb = *node.parents[2];
        const double* g = node.grad.data();
        if (px.requires_grad) {
          px.ensure_grad();
          std::vector<double> dx(ci * h * w);
          detail::conv_fwd(g, co, ho, wo, pk.value.data(), ci, kh, kw, stride,
                           pad, h, w, dx.data());
          for (std::size_t i = 0; i < dx.size(); ++i) px.grad[i] += dx[i];
        }
        if (pk.requires_grad) {
          pk.ensure_grad();
          detail::conv_dk(px.value.data(), ci, h, w, g, co, ho, wo, kh, kw,
                          stride, pad, pk.grad.data());
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (std::size_t oc = 0; oc < co; ++oc) {
            double s = 0.0;
            for (std::size_t i = 0; i < ho * wo; ++i) s += g[oc * ho * wo + i];
            pb.grad[oc] += s;
          }
        }
      });
}

// Max over the spatial extent of each channel. x [c x h x w] -> [c].
inline Tensor global_max_pool(const Tensor& x) {
  if (x.ndim() != 3)
    throw DimensionError("global_max_pool: expected 3-d input, got " +
                         shape_str(x.shape()));
  std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  std::vector<double> v(c);
  std::vector<std::size_t> arg(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* p = x.data().data() + ch * hw;
    std::size_t best = 0;
    for (std::size_t i = 1; i < hw; ++i)
      if (p[i] > p[best]) best = i;
    v[ch] = p[best];
    arg[ch] = best;
  }
  return detail::make_op({c}, std::move(v), detail::recording({&x}), {x},
                         [arg, hw](detail::Node& node) {
                           auto& px = *node.parents[0];
                           if (!px.requires_grad) return;
                           px.ensure_grad();
                           for (std::size_t ch = 0; ch < arg.size(); ++ch)
                             px.grad[ch * hw + arg[ch]] += node.grad[ch];
                         });
}

// Column-wise max over rows of x whose mask entry is nonzero. Ties resolve
// to the earliest row.
inline Tensor max_over_rows(const Tensor& x, const std::vector<int>& mask) {
  if (x.ndim() != 2)
    throw DimensionError("max_over_rows: expected matrix, got " +
                         shape_str(x.shape()));
  std::size_t t = x.dim(0), n = x.dim(1);
  if (mask.size() != t)
    throw DimensionError("max_over_rows: mask length " +
                         std::to_string(mask.size()) + " vs " +
                         std::to_string(t) + " rows");
  bool any = false;
  for (int m : mask) any = any || (m != 0);
  if (!any) throw UsageError("max_over_rows: no unmasked rows");
  std::vector<double> v(n);
  std::vector<std::size_t> arg(n);
  for (std::size_t j = 0; j < n; ++j) {
    bool seen = false;
    for (std::size_t i = 0; i < t; ++i) {
      if (!mask[i]) continue;
      double val = x.data()[i * n + j];
      if (!seen || val > v[j]) {
        v[j] = val;
        arg[j] = i;
        seen = true;
      }
    }
  }
  return detail::make_op({n}, std::move(v), detail::recording({&x}), {x},
                         [arg, n](detail::Node& node) {
                           auto& px = *node.parents[0];
                           if (!px.requires_grad) return;
                           px.ensure_grad();
                           for (std::size_t j = 0; j < n; ++j)
                             px.grad[arg[j] * n + j] += node.grad[j];
                         });
}

// ---- layer norm ----

// Normalizes each row of x to zero mean and unit variance, then applies the
// learned elementwise scale and shift.
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma,
                              const Tensor& beta, double eps = 1e-5) {
  if (x.ndim() != 2)
    throw DimensionError("layer_norm_rows: expected matrix, got " +
                         shape_str(x.shape()));
  std::size_t t = x.dim(0), n = x.dim(1);
  if (gamma.ndim() != 1 || gamma.dim(0) != n || beta.ndim() != 1 ||
      beta.dim(0) != n)
    throw DimensionError("layer_norm_rows: scale/shift do not match width " +
                         std::to_string(n));
  std::vector<double> v(t * n), xhat(t * n), inv_std(t);
  for (std::size_t i = 0; i < t; ++i) {
    const double* row = x.data().data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double d = row[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      double xh = (row[j] - mu) * is;
      xhat[i * n + j] = xh;
      v[i * n + j] = gamma.data()[j] * xh + beta.data()[j];
    }
  }
  return detail::make_op(
      {t, n}, std::move(v), detail::recording({&x, &gamma, &beta}),
      {x, gamma, beta},
      [t, n, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](detail::Node& node) {
        auto& px = *node.parents[0];
        auto& pg = *node.parents[1];
        auto& pb = *node.parents[2];
        const double* g = node.grad.data();
        if (pg.requires_grad) {
          pg.ensure_grad();
          for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = 0; j < n; ++j)
              pg.grad[j] += g[i * n + j] * xhat[i * n + j];
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = 0; j < n; ++j) pb.grad[j] += g[i * n + j];
        }
        if (px.requires_grad) {
          px.ensure_grad();
          for (std::size_t i = 0; i < t; ++i) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              double dxh = g[i * n + j] * pg.value[j];
              m1 += dxh;
              m2 += dxh * xhat[i * n + j];
            }
            m1 /= static_cast<double>(n);
            m2 /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              double dxh = g[i * n + j] * pg.value[j];
              px.grad[i * n + j] +=
                  inv_std[i] * (dxh - m1 - xhat[i * n + j] * m2);
            }
          }
        }
      });
}

// ---- dropout ----

// Inverted dropout: each element kept with probability 1-p and scaled by
// 1/(1-p) so the expected activation is unchanged. One uniform draw per
// element, in index order. Identity when not training or p == 0.
inline Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw UsageError("dropout: rate must be < 1");
  double inv = 1.0 / (1.0 - p);
  std::vector<double> mask(x.size());
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double keep = rng.uniform() >= p ? inv : 0.0;
    mask[i] = keep;
    v[i] = x.data()[i] * keep;
  }
  return detail::make_op(x.shape(), std::move(v), detail::recording({&x}),
                         {x}, [mask = std::move(mask)](detail::Node& node) {
                           auto& px = *node.parents[0];
                           if (!px.requires_grad) return;
                           px.ensure_grad();
                           for (std::size_t i = 0; i < mask.size(); ++i)
                             px.grad[i] += node.grad[i] * mask[i];
                         });
}

// ---- fused LSTM cell ----

struct LstmOut {
  Tensor h;
  Tensor c;
};

// One LSTM step as a single graph node. Gate pre-activations are the rows
// of w [4u x (nx+u)] applied to [x; h_prev] plus b, in block order
// input, forget, candidate, output:
//   i = sigm(z0)  f = sigm(z1)  g = tanh(z2)  o = sigm(z3)
//   c = f*c_prev + i*g          h = o*tanh(c)
// The node's value is [h; c]; h and c are slice views of it.
inline LstmOut lstm_cell(const Tensor& x, const Tensor& h_prev,
                         const Tensor& c_prev, const Tensor& w,
                         const Tensor& b) {
  std::size_t nx = x.size(), u = h_prev.size();
  if (h_prev.ndim() != 1 || c_prev.ndim() != 1 || c_prev.size() != u ||
      x.ndim() != 1)
    throw DimensionError("lstm_cell: state shapes disagree: h " +
                         shape_str(h_prev.shape()) + ", c " +
                         shape_str(c_prev.shape()));
  if (w.ndim() != 2 || w.dim(0) != 4 * u || w.dim(1) != nx + u)
    throw DimensionError("lstm_cell: weight " + shape_str(w.shape()) +
                         " does not match input " + std::to_string(nx) +
                         " + state " + std::to_string(u));
  if (b.ndim() != 1 || b.dim(0) != 4 * u)
    throw DimensionError("lstm_cell: bias " + shape_str(b.shape()) +
                         " does not match 4*" + std::to_string(u));

  std::vector<double> xh(nx + u);
  std::copy_n(x.data().data(), nx, xh.data());
  std::copy_n(h_prev.data().data(), u, xh.data() + nx);

  std::vector<double> act(4 * u);  // post-activation gates i,f,g,o
  for (std::size_t r = 0; r < 4 * u; ++r) {
    const double* row = w.data().data() + r * (nx + u);
    double s = b.data()[r];
    for (std::size_t j = 0; j < nx + u; ++j) s += row[j] * xh[j];
    act[r] = (r / u == 2) ? std::tanh(s) : 1.0 / (1.0 + std::exp(-s));
  }

  std::vector<double> v(2 * u), tc(u);
  for (std::size_t j = 0; j < u; ++j) {
    double i_g = act[j], f_g = act[u + j], g_g = act[2 * u + j],
           o_g = act[3 * u + j];
    double c = f_g * c_prev.data()[j] + i_g * g_g;
    tc[j] = std::tanh(c);
    v[u + j] = c;
    v[j] = o_g * tc[j];
  }

  Tensor hc = detail::make_op(
      {2 * u}, std::move(v),
      detail::recording({&x, &h_prev, &c_prev, &w, &b}),
      {x, h_prev, c_prev, w, b},
      [nx, u, act = std::move(act), tc = std::move(tc)](detail::Node& node) {
        auto& px = *node.parents[0];
        auto& ph = *node.parents[1];
        auto& pc = *node.parents[2];
        auto& pw = *node.parents[3];
        auto& pb = *node.parents[4];
        const double* g = node.grad.data();
        std::vector<double> dz(4 * u);
        std::vector<double> dcp(u);
        for (std::size_t j = 0; j < u; ++j) {
          double i_g = act[j], f_g = act[u + j], g_g = act[2 * u + j],
                 o_g = act[3 * u + j];
          double dh = g[j];
          double dc = g[u + j] + dh * o_g * (1.0 - tc[j] * tc[j]);
          double da_o = dh * tc[j] * o_g * (1.0 - o_g);
          double da_i = dc * g_g * i_g * (1.0 - i_g);
          double da_f = dc * pc.value[j] * f_g * (1.0 - f_g);
          double da_g = dc * i_g * (1.0 - g_g * g_g);
          dz[j] = da_i;
          dz[u + j] = da_f;
          dz[2 * u + j] = da_g;
          dz[3 * u + j] = da_o;
          dcp[j] = dc * f_g;
        }
        if (pc.requires_grad) {
          pc.ensure_grad();
          for (std::size_t j = 0; j < u; ++j) pc.grad[j] += dcp[j];
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (std::size_t r = 0; r < 4 * u; ++r) pb.grad[r] += dz[r];
        }
        if (pw.requires_grad) {
          pw.ensure_grad();
          for (std::size_t r = 0; r < 4 * u; ++r) {
            double d = dz[r];
            if (d == 0.0) continue;
            double* row = pw.grad.data() + r * (nx + u);
            for (std::size_t j = 0; j < nx; ++j) row[j] += d * px.value[j];
            for (std::size_t j = 0; j < u; ++j)
              row[nx + j] += d * ph.value[j];
          }
        }
        bool need_x = px.requires_grad, need_h = ph.requires_grad;
        if (need_x) px.ensure_grad();
        if (need_h) ph.ensure_grad();
        if (need_x || need_h) {
          for (std::size_t r = 0; r < 4 * u; ++r) {
            double d = dz[r];
            if (d == 0.0) continue;
            const double* row = pw.value.data() + r * (nx + u);
            if (need_x)
              for (std::size_t j = 0; j < nx; ++j)
                px.grad[j] += d * row[j];
            if (need_h)
              for (std::size_t j = 0; j < u; ++j)
                ph.grad[j] += d * row[nx + j];
          }
        }
      });
  return {slice_vec(hc, 0, u), slice_vec(hc, u, u)};
}

// ---- parameter init ----

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline void xavier_fill(Tensor& t, std::size_t fan_in, std::size_t fan_out,
                        Rng& rng) {
  double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& x : t.data()) x = rng.uniform(-a, a);
}

}  // namespace quesnet
