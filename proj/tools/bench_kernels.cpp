// Benchmarks the OpenMP kernels against their serial reference
// implementations on the conv shapes this network actually runs.

#include <chrono>
#include <cstdio>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "pagg/common.hpp"
#include "pagg/kernels.hpp"

using namespace pagg;
using kernels::ConvShape;

namespace {

double now() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

template <typename F>
double time_best(F fn, int iters) {
  double best = 1e300;
  for (int rep = 0; rep < 3; ++rep) {
    const double t0 = now();
    for (int i = 0; i < iters; ++i) fn();
    best = std::min(best, (now() - t0) / iters);
  }
  return best;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double worst = 0;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, double(std::abs(a[i] - b[i])));
  return worst;
}

void bench_conv(const char* label, const ConvShape& s, int iters) {
  Rng rng(7);
  std::vector<float> x(size_t(s.n * s.c_in * s.h * s.w));
  std::vector<float> w(size_t(s.c_out * s.c_in * s.kh * s.kw));
  std::vector<float> b(size_t(s.c_out));
  for (auto& v : x) v = float(rng.normal());
  for (auto& v : w) v = float(rng.normal() * 0.1);
  for (auto& v : b) v = float(rng.normal() * 0.1);
  const size_t out_elems = size_t(s.n * s.c_out * s.out_h() * s.out_w());
  std::vector<float> out_par(out_elems), out_ser(out_elems);

  const double flops = 2.0 * double(s.n) * double(s.c_out) * double(s.out_h()) *
                       double(s.out_w()) * double(s.c_in) * double(s.kh) * double(s.kw);

  const double t_par = time_best(
      [&] { kernels::conv2d_forward(s, x.data(), w.data(), b.data(), out_par.data()); }, iters);
  const double t_ser = time_best(
      [&] { kernels::serial::conv2d_forward(s, x.data(), w.data(), b.data(), out_ser.data()); },
      std::max(1, iters / 4));

  std::printf("%-28s parallel %7.2f GFLOP/s   serial %6.2f GFLOP/s   speedup %5.2fx   "
              "max|diff| %.2e\n",
              label, flops / t_par / 1e9, flops / t_ser / 1e9, t_ser / t_par,
              max_abs_diff(out_par, out_ser));
}

void bench_gemm(int64_t m, int64_t n, int64_t k, int iters) {
  Rng rng(11);
  std::vector<float> a(size_t(m * k)), b(size_t(k * n)), c_par(size_t(m * n)),
      c_ser(size_t(m * n));
  for (auto& v : a) v = float(rng.normal());
  for (auto& v : b) v = float(rng.normal());
  const double flops = 2.0 * double(m) * double(n) * double(k);
  const double t_par =
      time_best([&] { kernels::gemm(m, n, k, a.data(), b.data(), c_par.data()); }, iters);
  const double t_ser = time_best(
      [&] { kernels::serial::gemm(m, n, k, a.data(), b.data(), c_ser.data()); },
      std::max(1, iters / 4));
  std::printf("gemm %4lldx%-5lldx%-5lld        parallel %7.2f GFLOP/s   serial %6.2f GFLOP/s   "
              "speedup %5.2fx   max|diff| %.2e\n",
              (long long)m, (long long)n, (long long)k, flops / t_par / 1e9,
              flops / t_ser / 1e9, t_ser / t_par, max_abs_diff(c_par, c_ser));
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("OpenMP threads: %d\n", omp_get_max_threads());
#else
  std::printf("OpenMP not enabled; both paths run serially\n");
#endif

  bench_gemm(32, 2048, 144, 100);
  bench_gemm(64, 512, 288, 100);
  bench_gemm(128, 128, 1152, 100);

  // backbone and branch shapes at desk scale (0.25), width-64 bucket
  bench_conv("conv m1 3->16   32x64", {16, 3, 32, 64, 16, 3, 3, 1, 1, 1, 1}, 20);
  bench_conv("conv m2 16->16  32x64", {16, 16, 32, 64, 16, 3, 3, 1, 1, 1, 1}, 20);
  bench_conv("conv m4 32->32  16x32", {16, 32, 16, 32, 32, 3, 3, 1, 1, 1, 1}, 20);
  bench_conv("conv m6 64->64  8x16", {16, 64, 8, 16, 64, 3, 3, 1, 1, 1, 1}, 20);
  bench_conv("conv m7 64->128 4x16", {16, 64, 4, 16, 128, 3, 3, 1, 1, 0, 1}, 20);
  bench_conv("conv m8 128->128 2x16", {16, 128, 2, 16, 128, 2, 3, 1, 2, 0, 1}, 20);
  return 0;
}
