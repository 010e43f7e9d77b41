#pragma once

#include <algorithm>
#include <limits>
#include <memory>

#include "pagg/kernels.hpp"
#include "pagg/tensor.hpp"

namespace pagg {

// --- conv2d ----------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(Tensor<T> x, Tensor<T> w, Tensor<T> b, int64_t sh, int64_t sw, int64_t ph,
                 int64_t pw) {
  check(x.ndim() == 4, "conv2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
  check(w.ndim() == 4, "conv2d: kernel must be [F,C,kh,kw], got " + shape_str(w.shape()));
  check(w.dim(1) == x.dim(1), "conv2d: channel mismatch, input " + shape_str(x.shape()) +
                                  " kernel " + shape_str(w.shape()));
  check(sh >= 1 && sw >= 1, "conv2d: stride must be >= 1");
  check(ph >= 0 && pw >= 0, "conv2d: padding must be >= 0");
  kernels::ConvShape s{x.dim(0), x.dim(1), x.dim(2), x.dim(3),
                       w.dim(0), w.dim(2), w.dim(3), sh, sw, ph, pw};
  check(s.kh <= s.h + 2 * s.ph && s.kw <= s.w + 2 * s.pw,
        "conv2d: kernel larger than padded input");
  if (b.defined()) check(b.ndim() == 1 && b.dim(0) == s.c_out, "conv2d: bad bias shape");

  Tensor<T> out(Shape{s.n, s.c_out, s.out_h(), s.out_w()});
  kernels::conv2d_forward(s, x.data(), w.data(), b.defined() ? b.data() : nullptr, out.data());

  if (detail::tracing<T>({&x, &w, &b})) {
    GradTape<T>::active()->record(out, [x, w, b, out, s]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      if (x.requires_grad()) kernels::conv2d_backward_input(s, w.data(), go, x.ensure_grad());
      if (w.requires_grad() || (b.defined() && b.requires_grad())) {
        T* dw = w.requires_grad() ? w.ensure_grad() : nullptr;
        T* db = b.defined() && b.requires_grad() ? b.ensure_grad() : nullptr;
        if (dw) {
          kernels::conv2d_backward_params(s, x.data(), go, dw, db);
        } else if (db) {
          const int64_t npix = s.out_h() * s.out_w();
          for (int64_t img = 0; img < s.n; ++img)
            for (int64_t f = 0; f < s.c_out; ++f)
              for (int64_t p = 0; p < npix; ++p)
                db[f] += go[(img * s.c_out + f) * npix + p];
        }
      }
    });
  }
  detail::finish_op(out, "conv2d");
  return out;
}

// --- linear ----------------------------------------------------------------

template <typename T>
Tensor<T> linear(Tensor<T> x, Tensor<T> w, Tensor<T> b) {
  check(x.ndim() == 2, "linear: input must be [N,D], got " + shape_str(x.shape()));
  check(w.ndim() == 2 && w.dim(0) == x.dim(1),
        "linear: weight mismatch, input " + shape_str(x.shape()) + " weight " +
            shape_str(w.shape()));
  const int64_t n = x.dim(0), d = x.dim(1), e = w.dim(1);
  if (b.defined()) check(b.ndim() == 1 && b.dim(0) == e, "linear: bad bias shape");

  Tensor<T> out(Shape{n, e});
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    T* orow = out.data() + i * e;
    if (b.defined())
      for (int64_t j = 0; j < e; ++j) orow[j] = b.data()[j];
    const T* xrow = x.data() + i * d;
    for (int64_t p = 0; p < d; ++p) {
      const T xv = xrow[p];
      const T* wrow = w.data() + p * e;
      for (int64_t j = 0; j < e; ++j) orow[j] += xv * wrow[j];
    }
  }

  if (detail::tracing<T>({&x, &w, &b})) {
    GradTape<T>::active()->record(out, [x, w, b, out, n, d, e]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      if (x.requires_grad()) {
        T* gx = x.ensure_grad();
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) {
          const T* grow = go + i * e;
          T* gxrow = gx + i * d;
          for (int64_t p = 0; p < d; ++p) {
            const T* wrow = w.data() + p * e;
            T acc = T(0);
            for (int64_t j = 0; j < e; ++j) acc += grow[j] * wrow[j];
            gxrow[p] += acc;
          }
        }
      }
      if (w.requires_grad()) {
        T* gw = w.ensure_grad();
#pragma omp parallel for schedule(static)
        for (int64_t p = 0; p < d; ++p) {
          T* gwrow = gw + p * e;
          for (int64_t i = 0; i < n; ++i) {
            const T xv = x.data()[i * d + p];
            const T* grow = go + i * e;
            for (int64_t j = 0; j < e; ++j) gwrow[j] += xv * grow[j];
          }
        }
      }
      if (b.defined() && b.requires_grad()) {
        T* gb = b.ensure_grad();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < e; ++j) gb[j] += go[i * e + j];
      }
    });
  }
  detail::finish_op(out, "linear");
  return out;
}

// --- pooling ---------------------------------------------------------------

template <typename T>
Tensor<T> maxpool2x2(Tensor<T> x) {
  check(x.ndim() == 4, "maxpool2x2: input must be [N,C,H,W]");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  check(h % 2 == 0 && w % 2 == 0,
        "maxpool2x2: odd extent " + shape_str(x.shape()) + ", expected even H and W");
  Tensor<T> out(Shape{n, c, h / 2, w / 2});
  auto argmax = std::make_shared<std::vector<int32_t>>(size_t(out.numel()));
  kernels::maxpool2x2_forward(n, c, h, w, x.data(), out.data(), argmax->data());

  if (KinkProbe::active()) {
    // distance between winner and runner-up in each window. Ties at exactly
    // zero are relu-clamped pairs and ties across a fully constant window
    // come from a dead (constant) channel; both have identical sensitivities
    // and any reordering would require a relu crossing, which the relu
    // margin already guards.
    for (int64_t pl = 0; pl < n * c; ++pl) {
      const T* in = x.data() + pl * h * w;
      for (int64_t oy = 0; oy < h / 2; ++oy)
        for (int64_t ox = 0; ox < w / 2; ++ox) {
          T v[4] = {in[oy * 2 * w + ox * 2], in[oy * 2 * w + ox * 2 + 1],
                    in[(oy * 2 + 1) * w + ox * 2], in[(oy * 2 + 1) * w + ox * 2 + 1]};
          std::sort(v, v + 4);
          const bool guarded_tie = v[3] == v[2] && (v[2] == T(0) || v[0] == v[3]);
          if (!guarded_tie) KinkProbe::note_gap(double(v[3] - v[2]));
        }
    }
  }

  if (detail::tracing<T>({&x})) {
    GradTape<T>::active()->record(out, [x, out, argmax, n, c, h, w]() mutable {
      if (!out.has_grad() || !x.requires_grad()) return;
      kernels::maxpool2x2_backward(n, c, h, w, out.grad(), argmax->data(), x.ensure_grad());
    });
  }
  detail::finish_op(out, "maxpool2x2");
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(Tensor<T> x) {
  check(x.ndim() == 4, "global_avg_pool: input must be [N,C,H,W]");
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{n, c});
  for (int64_t i = 0; i < n * c; ++i) {
    const T* plane = x.data() + i * hw;
    T acc = T(0);
    for (int64_t p = 0; p < hw; ++p) acc += plane[p];
    out.data()[i] = acc / T(hw);
  }
  if (detail::tracing<T>({&x})) {
    GradTape<T>::active()->record(out, [x, out, n, c, hw]() mutable {
      if (!out.has_grad() || !x.requires_grad()) return;
      const T* go = out.grad();
      T* gx = x.ensure_grad();
      for (int64_t i = 0; i < n * c; ++i) {
        const T g = go[i] / T(hw);
        T* plane = gx + i * hw;
        for (int64_t p = 0; p < hw; ++p) plane[p] += g;
      }
    });
  }
  detail::finish_op(out, "global_avg_pool");
  return out;
}

// Backward routes gradient to the first (row-major) argmax per map.
template <typename T>
Tensor<T> global_max_pool(Tensor<T> x) {
  check(x.ndim() == 4, "global_max_pool: input must be [N,K,H,W]");
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{n, c});
  auto argmax = std::make_shared<std::vector<int32_t>>(size_t(n * c));
  for (int64_t i = 0; i < n * c; ++i) {
    const T* plane = x.data() + i * hw;
    T best = plane[0];
    T second = -std::numeric_limits<T>::infinity();
    int32_t bidx = 0;
    for (int64_t p = 1; p < hw; ++p) {
      if (plane[p] > best) {
        second = best;
        best = plane[p];
        bidx = int32_t(p);
      } else if (plane[p] > second) {
        second = plane[p];
      }
    }
    out.data()[i] = best;
    (*argmax)[size_t(i)] = bidx;
    if (KinkProbe::active() && hw > 1) {
      bool constant = true;
      for (int64_t p = 1; p < hw && constant; ++p) constant = plane[p] == plane[0];
      const bool guarded_tie = best == second && (second == T(0) || constant);
      if (!guarded_tie) KinkProbe::note_gap(double(best - second));
    }
  }
  if (detail::tracing<T>({&x})) {
    GradTape<T>::active()->record(out, [x, out, argmax, n, c, hw]() mutable {
      if (!out.has_grad() || !x.requires_grad()) return;
      const T* go = out.grad();
      T* gx = x.ensure_grad();
      for (int64_t i = 0; i < n * c; ++i) gx[i * hw + (*argmax)[size_t(i)]] += go[i];
    });
  }
  detail::finish_op(out, "global_max_pool");
  return out;
}

// --- softmax ---------------------------------------------------------------

namespace detail {

template <typename T>
void softmax_row(const T* x, T* y, int64_t k, int64_t stride) {
  T m = x[0];
  for (int64_t i = 1; i < k; ++i) m = std::max(m, x[i * stride]);
  T z = T(0);
  for (int64_t i = 0; i < k; ++i) {
    const T e = std::exp(x[i * stride] - m);
    y[i * stride] = e;
    z += e;
  }
  for (int64_t i = 0; i < k; ++i) y[i * stride] /= z;
}

template <typename T>
void softmax_row_backward(const T* y, const T* go, T* gx, int64_t k, int64_t stride) {
  T dot = T(0);
  for (int64_t i = 0; i < k; ++i) dot += go[i * stride] * y[i * stride];
  for (int64_t i = 0; i < k; ++i) gx[i * stride] += y[i * stride] * (go[i * stride] - dot);
}

}  // namespace detail

// softmax over the last axis.
template <typename T>
Tensor<T> softmax(Tensor<T> x) {
  check(x.ndim() >= 1 && x.shape().back() >= 2,
        "softmax: last axis must have K >= 2, got " + shape_str(x.shape()));
  const int64_t k = x.shape().back();
  const int64_t rows = x.numel() / k;
  Tensor<T> out(x.shape());
  for (int64_t r = 0; r < rows; ++r)
    detail::softmax_row(x.data() + r * k, out.data() + r * k, k, 1);
  if (detail::tracing<T>({&x})) {
    GradTape<T>::active()->record(out, [x, out, rows, k]() mutable {
      if (!out.has_grad() || !x.requires_grad()) return;
      T* gx = x.ensure_grad();
      for (int64_t r = 0; r < rows; ++r)
        detail::softmax_row_backward(out.data() + r * k, out.grad() + r * k, gx + r * k, k, 1);
    });
  }
  detail::finish_op(out, "softmax");
  return out;
}

// softmax over the channel axis of [N,K,H,W]; each spatial position is an
// independent distribution over K.
template <typename T>
Tensor<T> softmax_channels(Tensor<T> x) {
  check(x.ndim() == 4 && x.dim(1) >= 2, "softmax_channels: input must be [N,K,H,W], K >= 2");
  const int64_t n = x.dim(0), k = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out(x.shape());
  for (int64_t img = 0; img < n; ++img)
    for (int64_t p = 0; p < hw; ++p)
      detail::softmax_row(x.data() + img * k * hw + p, out.data() + img * k * hw + p, k, hw);
  if (detail::tracing<T>({&x})) {
    GradTape<T>::active()->record(out, [x, out, n, k, hw]() mutable {
      if (!out.has_grad() || !x.requires_grad()) return;
      T* gx = x.ensure_grad();
      for (int64_t img = 0; img < n; ++img)
        for (int64_t p = 0; p < hw; ++p)
          detail::softmax_row_backward(out.data() + img * k * hw + p,
                                       out.grad() + img * k * hw + p, gx + img * k * hw + p, k,
                                       hw);
    });
  }
  detail::finish_op(out, "softmax_channels");
  return out;
}

// --- dropout ---------------------------------------------------------------

// Inverted dropout: survivors scaled by 1/(1-rate) so eval is an identity.
template <typename T>
Tensor<T> dropout(Tensor<T> x, double rate, Mode mode, Rng& rng) {
  check(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1)");
  if (mode == Mode::Eval || rate == 0.0) return x;
  const int64_t n = x.numel();
  const T inv_keep = T(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<uint8_t>>(size_t(n));
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < n; ++i) {
    const bool keep = rng.uniform() >= rate;
    (*mask)[size_t(i)] = keep;
    out.data()[i] = keep ? x.data()[i] * inv_keep : T(0);
  }
  if (detail::tracing<T>({&x})) {
    GradTape<T>::active()->record(out, [x, out, mask, inv_keep, n]() mutable {
      if (!out.has_grad() || !x.requires_grad()) return;
      const T* go = out.grad();
      T* gx = x.ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        if ((*mask)[size_t(i)]) gx[i] += go[i] * inv_keep;
    });
  }
  detail::finish_op(out, "dropout");
  return out;
}

// --- fusion ----------------------------------------------------------------

// out[n,k] = gamma[n] * a[n,k] + (1 - gamma[n]) * b[n,k]
template <typename T>
Tensor<T> rowwise_lerp(Tensor<T> gamma, Tensor<T> a, Tensor<T> b) {
  detail::check_same_shape(a, b, "rowwise_lerp");
  check(gamma.ndim() == 2 && gamma.dim(1) == 1 && gamma.dim(0) == a.dim(0),
        "rowwise_lerp: gamma must be [N,1]");
  const int64_t n = a.dim(0), k = a.dim(1);
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < n; ++i) {
    const T g = gamma.data()[i];
    for (int64_t j = 0; j < k; ++j)
      out.data()[i * k + j] = g * a.data()[i * k + j] + (T(1) - g) * b.data()[i * k + j];
  }
  if (detail::tracing<T>({&gamma, &a, &b})) {
    GradTape<T>::active()->record(out, [gamma, a, b, out, n, k]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      if (gamma.requires_grad()) {
        T* gg = gamma.ensure_grad();
        for (int64_t i = 0; i < n; ++i) {
          T acc = T(0);
          for (int64_t j = 0; j < k; ++j)
            acc += go[i * k + j] * (a.data()[i * k + j] - b.data()[i * k + j]);
          gg[i] += acc;
        }
      }
      if (a.requires_grad()) {
        T* ga = a.ensure_grad();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < k; ++j) ga[i * k + j] += go[i * k + j] * gamma.data()[i];
      }
      if (b.requires_grad()) {
        T* gb = b.ensure_grad();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < k; ++j)
            gb[i * k + j] += go[i * k + j] * (T(1) - gamma.data()[i]);
      }
    });
  }
  detail::finish_op(out, "rowwise_lerp");
  return out;
}

// --- batch norm ------------------------------------------------------------

template <typename T>
struct BatchNorm2d {
  Tensor<T> gamma, beta;               // learnable affine
  Tensor<T> running_mean, running_var; // eval-mode statistics
  T momentum = T(0.1);
  T eps = T(1e-5);

  static BatchNorm2d make(int64_t channels) {
    BatchNorm2d bn;
    bn.gamma = Tensor<T>::full(Shape{channels}, T(1), true);
    bn.beta = Tensor<T>(Shape{channels}, true);
    bn.running_mean = Tensor<T>(Shape{channels});
    bn.running_var = Tensor<T>::full(Shape{channels}, T(1));
    return bn;
  }
};

template <typename T>
Tensor<T> batch_norm(Tensor<T> x, BatchNorm2d<T>& bn, Mode mode) {
  check(x.ndim() == 4, "batch_norm: input must be [N,C,H,W]");
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  check(c == bn.gamma.dim(0), "batch_norm: channel mismatch");
  const int64_t ns = n * hw;
  const int64_t cs = c * hw;

  Tensor<T> out(x.shape());
  Tensor<T> xhat(x.shape());
  std::vector<T> inv_std(static_cast<size_t>(c));

  if (mode == Mode::Train) {
    check(n >= 2, "batch_norm: training mode requires batch size >= 2, got 1");
#pragma omp parallel for schedule(static)
    for (int64_t ch = 0; ch < c; ++ch) {
      T mean = T(0);
      for (int64_t img = 0; img < n; ++img) {
        const T* p = x.data() + img * cs + ch * hw;
        for (int64_t i = 0; i < hw; ++i) mean += p[i];
      }
      mean /= T(ns);
      T var = T(0);
      for (int64_t img = 0; img < n; ++img) {
        const T* p = x.data() + img * cs + ch * hw;
        for (int64_t i = 0; i < hw; ++i) {
          const T d = p[i] - mean;
          var += d * d;
        }
      }
      var /= T(ns);
      const T istd = T(1) / std::sqrt(var + bn.eps);
      inv_std[size_t(ch)] = istd;
      const T g = bn.gamma.data()[ch], b = bn.beta.data()[ch];
      for (int64_t img = 0; img < n; ++img) {
        const T* p = x.data() + img * cs + ch * hw;
        T* xh = xhat.data() + img * cs + ch * hw;
        T* o = out.data() + img * cs + ch * hw;
        for (int64_t i = 0; i < hw; ++i) {
          xh[i] = (p[i] - mean) * istd;
          o[i] = g * xh[i] + b;
        }
      }
      // unbiased variance feeds the running estimate
      const T var_unbiased = ns > 1 ? var * T(ns) / T(ns - 1) : var;
      bn.running_mean.data()[ch] = (T(1) - bn.momentum) * bn.running_mean.data()[ch] +
                                   bn.momentum * mean;
      bn.running_var.data()[ch] = (T(1) - bn.momentum) * bn.running_var.data()[ch] +
                                  bn.momentum * var_unbiased;
    }
  } else {
    for (int64_t ch = 0; ch < c; ++ch)
      check(bn.running_var.data()[ch] > T(0), "batch_norm: running_var must be positive");
#pragma omp parallel for schedule(static)
    for (int64_t ch = 0; ch < c; ++ch) {
      const T mean = bn.running_mean.data()[ch];
      const T istd = T(1) / std::sqrt(bn.running_var.data()[ch] + bn.eps);
      inv_std[size_t(ch)] = istd;
      const T g = bn.gamma.data()[ch], b = bn.beta.data()[ch];
      for (int64_t img = 0; img < n; ++img) {
        const T* p = x.data() + img * cs + ch * hw;
        T* xh = xhat.data() + img * cs + ch * hw;
        T* o = out.data() + img * cs + ch * hw;
        for (int64_t i = 0; i < hw; ++i) {
          xh[i] = (p[i] - mean) * istd;
          o[i] = g * xh[i] + b;
        }
      }
    }
  }

  Tensor<T> gamma = bn.gamma, beta = bn.beta;
  if (detail::tracing<T>({&x, &gamma, &beta})) {
    const bool train = mode == Mode::Train;
    auto istd = std::make_shared<std::vector<T>>(std::move(inv_std));
    GradTape<T>::active()->record(out, [x, gamma, beta, out, xhat, istd, train, n, c, hw,
                                        cs]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      const int64_t ns = n * hw;
      if (gamma.requires_grad() || beta.requires_grad()) {
        T* gg = gamma.requires_grad() ? gamma.ensure_grad() : nullptr;
        T* gb = beta.requires_grad() ? beta.ensure_grad() : nullptr;
#pragma omp parallel for schedule(static)
        for (int64_t ch = 0; ch < c; ++ch) {
          T sum_g = T(0), sum_gx = T(0);
          for (int64_t img = 0; img < n; ++img) {
            const T* g = go + img * cs + ch * hw;
            const T* xh = xhat.data() + img * cs + ch * hw;
            for (int64_t i = 0; i < hw; ++i) {
              sum_g += g[i];
              sum_gx += g[i] * xh[i];
            }
          }
          if (gg) gg[ch] += sum_gx;
          if (gb) gb[ch] += sum_g;
        }
      }
      if (x.requires_grad()) {
        T* gx = x.ensure_grad();
#pragma omp parallel for schedule(static)
        for (int64_t ch = 0; ch < c; ++ch) {
          const T g = gamma.data()[ch];
          const T is = (*istd)[size_t(ch)];
          if (train) {
            T sum_d = T(0), sum_dx = T(0);
            for (int64_t img = 0; img < n; ++img) {
              const T* gr = go + img * cs + ch * hw;
              const T* xh = xhat.data() + img * cs + ch * hw;
              for (int64_t i = 0; i < hw; ++i) {
                const T dxhat = gr[i] * g;
                sum_d += dxhat;
                sum_dx += dxhat * xh[i];
              }
            }
            for (int64_t img = 0; img < n; ++img) {
              const T* gr = go + img * cs + ch * hw;
              const T* xh = xhat.data() + img * cs + ch * hw;
              T* dst = gx + img * cs + ch * hw;
              for (int64_t i = 0; i < hw; ++i) {
                const T dxhat = gr[i] * g;
                dst[i] += is / T(ns) * (T(ns) * dxhat - sum_d - xh[i] * sum_dx);
              }
            }
          } else {
            for (int64_t img = 0; img < n; ++img) {
              const T* gr = go + img * cs + ch * hw;
              T* dst = gx + img * cs + ch * hw;
              for (int64_t i = 0; i < hw; ++i) dst[i] += gr[i] * g * is;
            }
          }
        }
      }
    });
  }
  detail::finish_op(out, "batch_norm");
  return out;
}

// --- parameterized layer structs --------------------------------------------

template <typename T>
struct Conv2d {
  Tensor<T> w, b;
  int64_t sh = 1, sw = 1, ph = 0, pw = 0;

  static Conv2d make(int64_t c_in, int64_t c_out, int64_t kh, int64_t kw, int64_t sh,
                     int64_t sw, int64_t ph, int64_t pw, Rng& rng) {
    Conv2d conv;
    const T stddev = T(std::sqrt(2.0 / double(c_in * kh * kw)));
    conv.w = Tensor<T>::randn(Shape{c_out, c_in, kh, kw}, rng, stddev, true);
    conv.b = Tensor<T>(Shape{c_out}, true);
    conv.sh = sh;
    conv.sw = sw;
    conv.ph = ph;
    conv.pw = pw;
    return conv;
  }

  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, w, b, sh, sw, ph, pw); }
  int64_t param_count() const { return w.numel() + b.numel(); }
};

template <typename T>
struct Linear {
  Tensor<T> w, b;  // w is [D,E]

  static Linear make(int64_t d, int64_t e, Rng& rng) {
    Linear fc;
    const T stddev = T(std::sqrt(2.0 / double(d)));
    fc.w = Tensor<T>::randn(Shape{d, e}, rng, stddev, true);
    fc.b = Tensor<T>(Shape{e}, true);
    return fc;
  }

  Tensor<T> forward(const Tensor<T>& x) const { return linear(x, w, b); }
  int64_t param_count() const { return w.numel() + b.numel(); }
};

}  // namespace pagg
