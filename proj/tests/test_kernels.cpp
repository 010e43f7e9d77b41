#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "pagg/common.hpp"
#include "pagg/kernels.hpp"

using namespace pagg;
using kernels::ConvShape;

namespace {

std::vector<float> randn_vec(size_t n, uint64_t seed, double stddev = 1.0) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = float(rng.normal() * stddev);
  return v;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, double(std::abs(a[i] - b[i])));
  return worst;
}

}  // namespace

TEST_CASE("parallel gemm matches the serial reference") {
  const int64_t m = 17, n = 203, k = 61;
  auto a = randn_vec(size_t(m * k), 1);
  auto b = randn_vec(size_t(k * n), 2);
  std::vector<float> c_par(size_t(m * n)), c_ser(size_t(m * n));
  kernels::gemm(m, n, k, a.data(), b.data(), c_par.data());
  kernels::serial::gemm(m, n, k, a.data(), b.data(), c_ser.data());
  CHECK(max_abs_diff(c_par, c_ser) < 1e-4);
}

TEST_CASE("conv2d forward matches the quadruple-loop reference on all Table-II shapes") {
  const ConvShape shapes[] = {
      {2, 3, 8, 10, 4, 3, 3, 1, 1, 1, 1},   // backbone 3x3 pad 1
      {2, 4, 4, 10, 6, 3, 3, 1, 1, 0, 1},   // module 7: pad (0,1)
      {2, 4, 2, 10, 6, 2, 3, 1, 2, 0, 1},   // module 8: kernel 2x3 stride (1,2)
      {1, 5, 1, 8, 3, 1, 1, 1, 1, 0, 0},    // 1x1 patch scorer
      {2, 3, 7, 9, 4, 3, 3, 2, 2, 1, 1},    // uneven stride coverage
  };
  for (const auto& s : shapes) {
    CAPTURE(s.kh);
    CAPTURE(s.kw);
    auto x = randn_vec(size_t(s.n * s.c_in * s.h * s.w), 3);
    auto w = randn_vec(size_t(s.c_out * s.c_in * s.kh * s.kw), 4, 0.5);
    auto b = randn_vec(size_t(s.c_out), 5, 0.5);
    const size_t out_n = size_t(s.n * s.c_out * s.out_h() * s.out_w());
    std::vector<float> out_par(out_n), out_ser(out_n);
    kernels::conv2d_forward(s, x.data(), w.data(), b.data(), out_par.data());
    kernels::serial::conv2d_forward(s, x.data(), w.data(), b.data(), out_ser.data());
    CHECK(max_abs_diff(out_par, out_ser) < 1e-4);
  }
}

TEST_CASE("conv2d backward kernels match the serial reference") {
  const ConvShape s{2, 3, 6, 8, 5, 3, 3, 1, 2, 1, 1};
  auto x = randn_vec(size_t(s.n * s.c_in * s.h * s.w), 6);
  auto w = randn_vec(size_t(s.c_out * s.c_in * s.kh * s.kw), 7, 0.5);
  auto dy = randn_vec(size_t(s.n * s.c_out * s.out_h() * s.out_w()), 8);

  std::vector<float> dx_par(x.size()), dx_ser(x.size());
  kernels::conv2d_backward_input(s, w.data(), dy.data(), dx_par.data());
  kernels::serial::conv2d_backward_input(s, w.data(), dy.data(), dx_ser.data());
  CHECK(max_abs_diff(dx_par, dx_ser) < 1e-4);

  std::vector<float> dw_par(w.size()), dw_ser(w.size()), db_par(size_t(s.c_out)),
      db_ser(size_t(s.c_out));
  kernels::conv2d_backward_params(s, x.data(), dy.data(), dw_par.data(), db_par.data());
  kernels::serial::conv2d_backward_params(s, x.data(), dy.data(), dw_ser.data(),
                                          db_ser.data());
  CHECK(max_abs_diff(dw_par, dw_ser) < 1e-4);
  CHECK(max_abs_diff(db_par, db_ser) < 1e-4);
}

TEST_CASE("parallel kernels are bit-identical across repeated runs") {
  const ConvShape s{4, 8, 16, 24, 16, 3, 3, 1, 1, 1, 1};
  auto x = randn_vec(size_t(s.n * s.c_in * s.h * s.w), 9);
  auto w = randn_vec(size_t(s.c_out * s.c_in * s.kh * s.kw), 10, 0.3);
  const size_t out_n = size_t(s.n * s.c_out * s.out_h() * s.out_w());
  std::vector<float> out1(out_n), out2(out_n);
  kernels::conv2d_forward(s, x.data(), w.data(), (const float*)nullptr, out1.data());
  kernels::conv2d_forward(s, x.data(), w.data(), (const float*)nullptr, out2.data());
  CHECK(out1 == out2);
}

TEST_CASE("maxpool2x2 matches reference and records first-index argmax") {
  const int64_t n = 2, c = 3, h = 6, w = 8;
  auto x = randn_vec(size_t(n * c * h * w), 11);
  std::vector<float> out_par(size_t(n * c * h / 2 * w / 2)), out_ser(out_par.size());
  std::vector<int32_t> am_par(out_par.size()), am_ser(out_par.size());
  kernels::maxpool2x2_forward(n, c, h, w, x.data(), out_par.data(), am_par.data());
  kernels::serial::maxpool2x2_forward(n, c, h, w, x.data(), out_ser.data(), am_ser.data());
  CHECK(out_par == out_ser);
  CHECK(am_par == am_ser);

  // tie inside a window routes to the first element in row-major order
  std::vector<float> flat = {1.f, 1.f, 1.f, 1.f};
  std::vector<float> pooled(1);
  std::vector<int32_t> argmax(1);
  kernels::maxpool2x2_forward(1, 1, 2, 2, flat.data(), pooled.data(), argmax.data());
  CHECK(pooled[0] == 1.f);
  CHECK(argmax[0] == 0);
}

TEST_CASE("im2col and im2row agree as transposes") {
  const ConvShape s{1, 2, 5, 6, 1, 3, 3, 1, 1, 1, 1};
  auto x = randn_vec(size_t(s.c_in * s.h * s.w), 12);
  const int64_t kdim = s.c_in * s.kh * s.kw;
  const int64_t npix = s.out_h() * s.out_w();
  std::vector<float> col(size_t(kdim * npix)), colt(size_t(kdim * npix));
  kernels::im2col(s, x.data(), col.data());
  kernels::im2row(s, x.data(), colt.data());
  for (int64_t r = 0; r < kdim; ++r)
    for (int64_t p = 0; p < npix; ++p) CHECK(col[size_t(r * npix + p)] == colt[size_t(p * kdim + r)]);
}
