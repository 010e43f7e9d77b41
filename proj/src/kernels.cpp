#include "pagg/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace pagg::kernels {

// ---------------------------------------------------------------------------
// GEMM, axpy formulation: C rows accumulate scaled rows of B. Both the B row
// and the C row are contiguous, which vectorizes well; each C row is owned by
// one thread with a fixed k order.
// ---------------------------------------------------------------------------

template <typename T>
void gemm_acc(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c) {
  // Tiled over n so a C segment stays in L1 across the whole k loop and each
  // B tile is streamed once for all m rows. Whichever of the tile count and
  // the row count is larger becomes the parallel axis; either way every C
  // element keeps the fixed ascending-k reduction order, so results are
  // bit-identical across thread counts.
  constexpr int64_t kTile = 512;
  const int64_t tiles = (n + kTile - 1) / kTile;
  if (tiles >= m) {
#pragma omp parallel for schedule(static)
    for (int64_t t = 0; t < tiles; ++t) {
      const int64_t j0 = t * kTile;
      const int64_t j1 = std::min(n, j0 + kTile);
      for (int64_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
          const T av = arow[p];
          if (av == T(0)) continue;
          const T* brow = b + p * n;
          for (int64_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
        }
      }
    }
  } else {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
      T* crow = c + i * n;
      const T* arow = a + i * k;
      for (int64_t t = 0; t < tiles; ++t) {
        const int64_t j0 = t * kTile;
        const int64_t j1 = std::min(n, j0 + kTile);
        for (int64_t p = 0; p < k; ++p) {
          const T av = arow[p];
          if (av == T(0)) continue;
          const T* brow = b + p * n;
          for (int64_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }
}

template <typename T>
void gemm(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c) {
  std::memset(c, 0, sizeof(T) * size_t(m) * size_t(n));
  gemm_acc(m, n, k, a, b, c);
}

namespace {

// row_stride lets one image's patch matrix land inside a wider batch matrix
template <typename T>
void im2col_strided(const ConvShape& s, const T* img, T* col, int64_t row_stride) {
  const int64_t oh = s.out_h(), ow = s.out_w();
  int64_t row = 0;
  for (int64_t c = 0; c < s.c_in; ++c) {
    const T* plane = img + c * s.h * s.w;
    for (int64_t kh = 0; kh < s.kh; ++kh) {
      for (int64_t kw = 0; kw < s.kw; ++kw, ++row) {
        T* dst = col + row * row_stride;
        for (int64_t oy = 0; oy < oh; ++oy) {
          const int64_t iy = oy * s.sh - s.ph + kh;
          if (iy < 0 || iy >= s.h) {
            std::memset(dst + oy * ow, 0, sizeof(T) * size_t(ow));
            continue;
          }
          const T* src = plane + iy * s.w;
          if (s.sw == 1 && s.pw == 0) {
            std::memcpy(dst + oy * ow, src + kw, sizeof(T) * size_t(ow));
          } else {
            for (int64_t ox = 0; ox < ow; ++ox) {
              const int64_t ix = ox * s.sw - s.pw + kw;
              dst[oy * ow + ox] = (ix >= 0 && ix < s.w) ? src[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

// grow-only scratch, reused across kernel calls
template <typename T>
std::vector<T>& scratch(int which, size_t n) {
  static thread_local std::vector<T> bufs[4];
  if (bufs[which].size() < n) bufs[which].resize(n);
  return bufs[which];
}

}  // namespace

template <typename T>
void im2col(const ConvShape& s, const T* img, T* col) {
  im2col_strided(s, img, col, s.out_h() * s.out_w());
}

template <typename T>
void im2row(const ConvShape& s, const T* img, T* colt) {
  const int64_t oh = s.out_h(), ow = s.out_w();
  const int64_t kdim = s.c_in * s.kh * s.kw;
  for (int64_t oy = 0; oy < oh; ++oy) {
    for (int64_t ox = 0; ox < ow; ++ox) {
      T* dst = colt + (oy * ow + ox) * kdim;
      int64_t idx = 0;
      for (int64_t c = 0; c < s.c_in; ++c) {
        const T* plane = img + c * s.h * s.w;
        for (int64_t kh = 0; kh < s.kh; ++kh) {
          const int64_t iy = oy * s.sh - s.ph + kh;
          for (int64_t kw = 0; kw < s.kw; ++kw, ++idx) {
            const int64_t ix = ox * s.sw - s.pw + kw;
            dst[idx] =
                (iy >= 0 && iy < s.h && ix >= 0 && ix < s.w) ? plane[iy * s.w + ix] : T(0);
          }
        }
      }
    }
  }
}

namespace {

// Patch matrices for the whole batch, one wide GEMM per layer call. Image
// `img` occupies columns [img*npix, (img+1)*npix).
template <typename T>
void im2col_batch(const ConvShape& s, const T* x, T* col_all) {
  const int64_t npix = s.out_h() * s.out_w();
  const int64_t in_stride = s.c_in * s.h * s.w;
  const int64_t total = s.n * npix;
#pragma omp parallel for schedule(static)
  for (int64_t img = 0; img < s.n; ++img)
    im2col_strided(s, x + img * in_stride, col_all + img * npix, total);
}

template <typename T>
void im2row_batch(const ConvShape& s, const T* x, T* colt_all) {
  const int64_t npix = s.out_h() * s.out_w();
  const int64_t kdim = s.c_in * s.kh * s.kw;
  const int64_t in_stride = s.c_in * s.h * s.w;
#pragma omp parallel for schedule(static)
  for (int64_t img = 0; img < s.n; ++img)
    im2row(s, x + img * in_stride, colt_all + img * npix * kdim);
}

// dout is [n][f][pix]; the GEMM wants [f][n*pix].
template <typename T>
void gather_dout(const ConvShape& s, const T* dout, T* dy_all) {
  const int64_t npix = s.out_h() * s.out_w();
  const int64_t total = s.n * npix;
#pragma omp parallel for schedule(static)
  for (int64_t f = 0; f < s.c_out; ++f)
    for (int64_t img = 0; img < s.n; ++img)
      std::memcpy(dy_all + f * total + img * npix, dout + (img * s.c_out + f) * npix,
                  sizeof(T) * size_t(npix));
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvShape& s, const T* x, const T* w, const T* bias, T* out) {
  const int64_t oh = s.out_h(), ow = s.out_w(), npix = oh * ow;
  const int64_t kdim = s.c_in * s.kh * s.kw;
  const int64_t total = s.n * npix;

  auto& col_all = scratch<T>(0, size_t(kdim) * size_t(total));
  im2col_batch(s, x, col_all.data());
  auto& out_all = scratch<T>(1, size_t(s.c_out) * size_t(total));
  gemm(s.c_out, total, kdim, w, col_all.data(), out_all.data());

#pragma omp parallel for schedule(static)
  for (int64_t img = 0; img < s.n; ++img) {
    for (int64_t f = 0; f < s.c_out; ++f) {
      const T* src = out_all.data() + f * total + img * npix;
      T* dst = out + (img * s.c_out + f) * npix;
      if (bias) {
        const T bv = bias[f];
        for (int64_t p = 0; p < npix; ++p) dst[p] = src[p] + bv;
      } else {
        std::memcpy(dst, src, sizeof(T) * size_t(npix));
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvShape& s, const T* w, const T* dout, T* dx_acc) {
  const int64_t oh = s.out_h(), ow = s.out_w(), npix = oh * ow;
  const int64_t kdim = s.c_in * s.kh * s.kw;
  const int64_t in_stride = s.c_in * s.h * s.w;
  const int64_t total = s.n * npix;

  // colgrad = W^T * dY, then scatter patch columns back onto the input grid
  auto& wt = scratch<T>(3, size_t(kdim) * size_t(s.c_out));
  for (int64_t f = 0; f < s.c_out; ++f)
    for (int64_t r = 0; r < kdim; ++r) wt[size_t(r * s.c_out + f)] = w[f * kdim + r];

  auto& dy_all = scratch<T>(1, size_t(s.c_out) * size_t(total));
  gather_dout(s, dout, dy_all.data());
  auto& colgrad = scratch<T>(0, size_t(kdim) * size_t(total));
  gemm(kdim, total, s.c_out, wt.data(), dy_all.data(), colgrad.data());

  for (int64_t img = 0; img < s.n; ++img) {
    T* dx = dx_acc + img * in_stride;
    // each channel owns its kdim rows: scatter is race-free and ordered
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < s.c_in; ++c) {
      for (int64_t kh = 0; kh < s.kh; ++kh) {
        for (int64_t kw = 0; kw < s.kw; ++kw) {
          const T* src = colgrad.data() + ((c * s.kh + kh) * s.kw + kw) * total + img * npix;
          for (int64_t oy = 0; oy < oh; ++oy) {
            const int64_t y = oy * s.sh - s.ph + kh;
            if (y < 0 || y >= s.h) continue;
            T* dxrow = dx + (c * s.h + y) * s.w;
            const T* srow = src + oy * ow;
            if (s.sw == 1) {
              const int64_t x0 = std::max<int64_t>(0, s.pw - kw);
              const int64_t x1 = std::min(ow, s.w + s.pw - kw);
              for (int64_t ox = x0; ox < x1; ++ox) dxrow[ox - s.pw + kw] += srow[ox];
            } else {
              for (int64_t ox = 0; ox < ow; ++ox) {
                const int64_t xpos = ox * s.sw - s.pw + kw;
                if (xpos >= 0 && xpos < s.w) dxrow[xpos] += srow[ox];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_params(const ConvShape& s, const T* x, const T* dout, T* dw_acc,
                            T* db_acc) {
  const int64_t oh = s.out_h(), ow = s.out_w(), npix = oh * ow;
  const int64_t kdim = s.c_in * s.kh * s.kw;
  const int64_t total = s.n * npix;

  auto& colt_all = scratch<T>(2, size_t(total) * size_t(kdim));
  im2row_batch(s, x, colt_all.data());
  auto& dy_all = scratch<T>(1, size_t(s.c_out) * size_t(total));
  gather_dout(s, dout, dy_all.data());
  // dw[f,:] += sum_p dy[f,p] * colt[p,:]
  gemm_acc(s.c_out, kdim, total, dy_all.data(), colt_all.data(), dw_acc);
  if (db_acc) {
#pragma omp parallel for schedule(static)
    for (int64_t f = 0; f < s.c_out; ++f) {
      T acc = T(0);
      const T* row = dy_all.data() + f * total;
      for (int64_t p = 0; p < total; ++p) acc += row[p];
      db_acc[f] += acc;
    }
  }
}

template <typename T>
void maxpool2x2_forward(int64_t n, int64_t c, int64_t h, int64_t w, const T* x, T* out,
                        int32_t* argmax) {
  const int64_t oh = h / 2, ow = w / 2;
  const int64_t planes = n * c;
#pragma omp parallel for schedule(static)
  for (int64_t pl = 0; pl < planes; ++pl) {
    const T* in = x + pl * h * w;
    T* o = out + pl * oh * ow;
    int32_t* am = argmax + pl * oh * ow;
    for (int64_t oy = 0; oy < oh; ++oy) {
      for (int64_t ox = 0; ox < ow; ++ox) {
        const int64_t y0 = oy * 2, x0 = ox * 2;
        T best = in[y0 * w + x0];
        int32_t bidx = int32_t(y0 * w + x0);
        const int64_t cand[3] = {y0 * w + x0 + 1, (y0 + 1) * w + x0, (y0 + 1) * w + x0 + 1};
        for (int64_t k = 0; k < 3; ++k) {
          if (in[cand[k]] > best) {
            best = in[cand[k]];
            bidx = int32_t(cand[k]);
          }
        }
        o[oy * ow + ox] = best;
        am[oy * ow + ox] = bidx;
      }
    }
  }
}

template <typename T>
void maxpool2x2_backward(int64_t n, int64_t c, int64_t h, int64_t w, const T* dout,
                         const int32_t* argmax, T* dx_acc) {
  const int64_t oh = h / 2, ow = w / 2;
  const int64_t planes = n * c;
#pragma omp parallel for schedule(static)
  for (int64_t pl = 0; pl < planes; ++pl) {
    const T* dy = dout + pl * oh * ow;
    const int32_t* am = argmax + pl * oh * ow;
    T* dx = dx_acc + pl * h * w;
    for (int64_t p = 0; p < oh * ow; ++p) dx[am[p]] += dy[p];
  }
}

// ---------------------------------------------------------------------------
// Serial reference implementations.
// ---------------------------------------------------------------------------

namespace serial {

template <typename T>
void gemm(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void conv2d_forward(const ConvShape& s, const T* x, const T* w, const T* bias, T* out) {
  const int64_t oh = s.out_h(), ow = s.out_w();
  for (int64_t img = 0; img < s.n; ++img) {
    for (int64_t f = 0; f < s.c_out; ++f) {
      for (int64_t oy = 0; oy < oh; ++oy) {
        for (int64_t ox = 0; ox < ow; ++ox) {
          T acc = bias ? bias[f] : T(0);
          for (int64_t c = 0; c < s.c_in; ++c) {
            for (int64_t kh = 0; kh < s.kh; ++kh) {
              const int64_t iy = oy * s.sh - s.ph + kh;
              if (iy < 0 || iy >= s.h) continue;
              for (int64_t kw = 0; kw < s.kw; ++kw) {
                const int64_t ix = ox * s.sw - s.pw + kw;
                if (ix < 0 || ix >= s.w) continue;
                acc += w[((f * s.c_in + c) * s.kh + kh) * s.kw + kw] *
                       x[((img * s.c_in + c) * s.h + iy) * s.w + ix];
              }
            }
          }
          out[((img * s.c_out + f) * oh + oy) * ow + ox] = acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvShape& s, const T* w, const T* dout, T* dx_acc) {
  const int64_t oh = s.out_h(), ow = s.out_w();
  for (int64_t img = 0; img < s.n; ++img) {
    for (int64_t f = 0; f < s.c_out; ++f) {
      for (int64_t oy = 0; oy < oh; ++oy) {
        for (int64_t ox = 0; ox < ow; ++ox) {
          const T g = dout[((img * s.c_out + f) * oh + oy) * ow + ox];
          for (int64_t c = 0; c < s.c_in; ++c) {
            for (int64_t kh = 0; kh < s.kh; ++kh) {
              const int64_t iy = oy * s.sh - s.ph + kh;
              if (iy < 0 || iy >= s.h) continue;
              for (int64_t kw = 0; kw < s.kw; ++kw) {
                const int64_t ix = ox * s.sw - s.pw + kw;
                if (ix < 0 || ix >= s.w) continue;
                dx_acc[((img * s.c_in + c) * s.h + iy) * s.w + ix] +=
                    g * w[((f * s.c_in + c) * s.kh + kh) * s.kw + kw];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_params(const ConvShape& s, const T* x, const T* dout, T* dw_acc,
                            T* db_acc) {
  const int64_t oh = s.out_h(), ow = s.out_w();
  for (int64_t img = 0; img < s.n; ++img) {
    for (int64_t f = 0; f < s.c_out; ++f) {
      for (int64_t oy = 0; oy < oh; ++oy) {
        for (int64_t ox = 0; ox < ow; ++ox) {
          const T g = dout[((img * s.c_out + f) * oh + oy) * ow + ox];
          if (db_acc) db_acc[f] += g;
          for (int64_t c = 0; c < s.c_in; ++c) {
            for (int64_t kh = 0; kh < s.kh; ++kh) {
              const int64_t iy = oy * s.sh - s.ph + kh;
              if (iy < 0 || iy >= s.h) continue;
              for (int64_t kw = 0; kw < s.kw; ++kw) {
                const int64_t ix = ox * s.sw - s.pw + kw;
                if (ix < 0 || ix >= s.w) continue;
                dw_acc[((f * s.c_in + c) * s.kh + kh) * s.kw + kw] +=
                    g * x[((img * s.c_in + c) * s.h + iy) * s.w + ix];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void maxpool2x2_forward(int64_t n, int64_t c, int64_t h, int64_t w, const T* x, T* out,
                        int32_t* argmax) {
  const int64_t oh = h / 2, ow = w / 2;
  for (int64_t pl = 0; pl < n * c; ++pl) {
    const T* in = x + pl * h * w;
    for (int64_t oy = 0; oy < oh; ++oy) {
      for (int64_t ox = 0; ox < ow; ++ox) {
        T best = in[oy * 2 * w + ox * 2];
        int32_t bidx = int32_t(oy * 2 * w + ox * 2);
        for (int64_t dy = 0; dy < 2; ++dy) {
          for (int64_t dx = 0; dx < 2; ++dx) {
            const int64_t idx = (oy * 2 + dy) * w + ox * 2 + dx;
            if (in[idx] > best) {
              best = in[idx];
              bidx = int32_t(idx);
            }
          }
        }
        out[pl * oh * ow + oy * ow + ox] = best;
        argmax[pl * oh * ow + oy * ow + ox] = bidx;
      }
    }
  }
}

}  // namespace serial

// Explicit instantiations: float for training, double for verification.
#define PAGG_INSTANTIATE_KERNELS(T)                                                            \
  template void gemm<T>(int64_t, int64_t, int64_t, const T*, const T*, T*);                    \
  template void gemm_acc<T>(int64_t, int64_t, int64_t, const T*, const T*, T*);                \
  template void im2col<T>(const ConvShape&, const T*, T*);                                     \
  template void im2row<T>(const ConvShape&, const T*, T*);                                     \
  template void conv2d_forward<T>(const ConvShape&, const T*, const T*, const T*, T*);         \
  template void conv2d_backward_input<T>(const ConvShape&, const T*, const T*, T*);            \
  template void conv2d_backward_params<T>(const ConvShape&, const T*, const T*, T*, T*);       \
  template void maxpool2x2_forward<T>(int64_t, int64_t, int64_t, int64_t, const T*, T*,        \
                                      int32_t*);                                               \
  template void maxpool2x2_backward<T>(int64_t, int64_t, int64_t, int64_t, const T*,           \
                                       const int32_t*, T*);                                    \
  template void serial::gemm<T>(int64_t, int64_t, int64_t, const T*, const T*, T*);            \
  template void serial::conv2d_forward<T>(const ConvShape&, const T*, const T*, const T*, T*); \
  template void serial::conv2d_backward_input<T>(const ConvShape&, const T*, const T*, T*);    \
  template void serial::conv2d_backward_params<T>(const ConvShape&, const T*, const T*, T*,    \
                                                  T*);                                         \
  template void serial::maxpool2x2_forward<T>(int64_t, int64_t, int64_t, int64_t, const T*,    \
                                              T*, int32_t*);

PAGG_INSTANTIATE_KERNELS(float)
PAGG_INSTANTIATE_KERNELS(double)

#undef PAGG_INSTANTIATE_KERNELS

}  // namespace pagg::kernels
