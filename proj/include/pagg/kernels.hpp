#pragma once

#include <cstdint>

#include "pagg/common.hpp"

// Low-level compute kernels. pagg::kernels holds the OpenMP-parallel
// production path; pagg::kernels::serial holds plain-loop reference
// implementations kept for testing and benchmarking.
//
// Every parallel kernel assigns each output element to exactly one thread
// and reduces over a fixed serial index order, so results are bit-identical
// across runs and thread counts.

namespace pagg::kernels {

struct ConvShape {
  int64_t n, c_in, h, w;        // input
  int64_t c_out, kh, kw;        // kernel
  int64_t sh, sw, ph, pw;       // stride, zero padding
  int64_t out_h() const { return (h + 2 * ph - kh) / sh + 1; }
  int64_t out_w() const { return (w + 2 * pw - kw) / sw + 1; }
};

// C[M,N] = A[M,K] * B[K,N], row-major.
template <typename T>
void gemm(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c);

// C[M,N] += A[M,K] * B[K,N].
template <typename T>
void gemm_acc(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c);

// Patch matrix for one image: col[(c,kh,kw), (oy,ox)], row-major.
template <typename T>
void im2col(const ConvShape& s, const T* img, T* col);

// Transposed patch matrix: colt[(oy,ox), (c,kh,kw)], row-major.
template <typename T>
void im2row(const ConvShape& s, const T* img, T* colt);

// out[n][f][oy][ox] = sum_{c,kh,kw} w[f][c][kh][kw] * x_padded[...] + bias[f]
template <typename T>
void conv2d_forward(const ConvShape& s, const T* x, const T* w, const T* bias, T* out);

// dx gather: each input element collects from the output positions it fed.
template <typename T>
void conv2d_backward_input(const ConvShape& s, const T* w, const T* dout, T* dx_acc);

// dw[f][c][kh][kw] += sum over batch and output positions; db[f] += sum dout.
template <typename T>
void conv2d_backward_params(const ConvShape& s, const T* x, const T* dout, T* dw_acc, T* db_acc);

// 2x2/stride-2 max pooling; argmax records the first (row-major) maximum.
template <typename T>
void maxpool2x2_forward(int64_t n, int64_t c, int64_t h, int64_t w, const T* x, T* out,
                        int32_t* argmax);

template <typename T>
void maxpool2x2_backward(int64_t n, int64_t c, int64_t h, int64_t w, const T* dout,
                         const int32_t* argmax, T* dx_acc);

namespace serial {

template <typename T>
void gemm(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c);

// Direct quadruple-loop convolution, no im2col.
template <typename T>
void conv2d_forward(const ConvShape& s, const T* x, const T* w, const T* bias, T* out);

template <typename T>
void conv2d_backward_input(const ConvShape& s, const T* w, const T* dout, T* dx_acc);

template <typename T>
void conv2d_backward_params(const ConvShape& s, const T* x, const T* dout, T* dw_acc, T* db_acc);

template <typename T>
void maxpool2x2_forward(int64_t n, int64_t c, int64_t h, int64_t w, const T* x, T* out,
                        int32_t* argmax);

}  // namespace serial

}  // namespace pagg::kernels
