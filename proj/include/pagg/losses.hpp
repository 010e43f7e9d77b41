#pragma once

#include <algorithm>
#include <array>
#include <numeric>
#include <vector>

#include "pagg/tensor.hpp"

namespace pagg {

struct LossConfig {
  int64_t top_k = 3;                              // k of the softermax top-k mass
  double lambda = 0.4;                            // softermax share inside L4
  std::array<double, 4> eta = {0.1, 0.1, 1.0, 0.1};  // weights of L1..L4

  void validate() const {
    check(top_k >= 1, "LossConfig: top_k must be >= 1");
    check(lambda >= 0.0 && lambda <= 1.0, "LossConfig: lambda must be in [0,1]");
    for (double e : eta) check(e >= 0.0, "LossConfig: eta weights must be >= 0");
  }
};

namespace detail {

// loss = lse(x) - x[label]; grad += scale * (softmax - onehot)
template <typename T>
T ce_row(const T* x, int64_t k, int64_t label, T* grad, T grad_scale) {
  T m = x[0];
  for (int64_t i = 1; i < k; ++i) m = std::max(m, x[i]);
  T z = T(0);
  for (int64_t i = 0; i < k; ++i) z += std::exp(x[i] - m);
  const T lse = m + std::log(z);
  if (grad) {
    for (int64_t i = 0; i < k; ++i) {
      T g = std::exp(x[i] - m) / z;
      if (i == label) g -= T(1);
      grad[i] += grad_scale * g;
    }
  }
  return lse - x[label];
}

// softermax row: -log(top-k softmax mass). Top-k chosen by value, ties to the
// lowest index; both exps are accumulated in ascending index order so k == K
// yields exactly zero. The selection is held constant in backward.
template <typename T>
T softermax_row(const T* x, int64_t k, int64_t top_k, T* grad, T grad_scale) {
  std::vector<int32_t> order(static_cast<size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int32_t a, int32_t b) { return x[a] > x[b]; });
  std::vector<uint8_t> in_top(static_cast<size_t>(k), 0);
  for (int64_t i = 0; i < top_k; ++i) in_top[size_t(order[size_t(i)])] = 1;
  if (top_k < k) KinkProbe::note_gap(double(x[order[size_t(top_k - 1)]] - x[order[size_t(top_k)]]));

  T m = x[0];
  for (int64_t i = 1; i < k; ++i) m = std::max(m, x[i]);
  T z_all = T(0), z_top = T(0);
  for (int64_t i = 0; i < k; ++i) {
    const T e = std::exp(x[i] - m);
    z_all += e;
    if (in_top[size_t(i)]) z_top += e;
  }
  if (grad) {
    for (int64_t i = 0; i < k; ++i) {
      const T e = std::exp(x[i] - m);
      T g = e / z_all;
      if (in_top[size_t(i)]) g -= e / z_top;
      grad[i] += grad_scale * g;
    }
  }
  return std::log(z_all) - std::log(z_top);
}

}  // namespace detail

// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> cross_entropy(Tensor<T> logits, std::vector<int64_t> labels) {
  check(logits.ndim() == 2, "cross_entropy: logits must be [N,K]");
  const int64_t n = logits.dim(0), k = logits.dim(1);
  check(int64_t(labels.size()) == n, "cross_entropy: label count mismatch");
  for (int64_t lab : labels)
    check(lab >= 0 && lab < k,
          "cross_entropy: label " + std::to_string(lab) + " out of range [0," +
              std::to_string(k) + ")");

  Tensor<T> out(Shape{1});
  T acc = T(0);
  for (int64_t i = 0; i < n; ++i)
    acc += detail::ce_row(logits.data() + i * k, k, labels[size_t(i)], (T*)nullptr, T(0));
  out.data()[0] = acc / T(n);

  if (detail::tracing<T>({&logits})) {
    GradTape<T>::active()->record(out, [logits, out, labels, n, k]() mutable {
      if (!out.has_grad() || !logits.requires_grad()) return;
      const T scale = out.grad()[0] / T(n);
      T* gx = logits.ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        detail::ce_row(logits.data() + i * k, k, labels[size_t(i)], gx + i * k, scale);
    });
  }
  detail::finish_op(out, "cross_entropy");
  return out;
}

// Softermax loss of a single score vector.
template <typename T>
Tensor<T> softermax(Tensor<T> scores, int64_t top_k) {
  check(scores.ndim() == 1, "softermax: scores must be a [K] vector");
  const int64_t k = scores.dim(0);
  check(top_k >= 1 && top_k <= k,
        "softermax: k must be in [1,K], got " + std::to_string(top_k));
  Tensor<T> out(Shape{1});
  out.data()[0] = detail::softermax_row(scores.data(), k, top_k, (T*)nullptr, T(0));
  if (detail::tracing<T>({&scores})) {
    GradTape<T>::active()->record(out, [scores, out, k, top_k]() mutable {
      if (!out.has_grad() || !scores.requires_grad()) return;
      detail::softermax_row(scores.data(), k, top_k, scores.ensure_grad(), out.grad()[0]);
    });
  }
  detail::finish_op(out, "softermax");
  return out;
}

// Intermediate patch supervision: per patch, lambda * softermax +
// (1 - lambda) * cross-entropy against the image label; averaged over the
// image's patches, then over the batch.
template <typename T>
Tensor<T> l4_loss(Tensor<T> patch_logits, std::vector<int64_t> labels,
                  const LossConfig& cfg) {
  check(patch_logits.ndim() == 4, "l4_loss: patch logits must be [N,K,1,Wp]");
  const int64_t n = patch_logits.dim(0), k = patch_logits.dim(1),
                wp = patch_logits.dim(2) * patch_logits.dim(3);
  check(int64_t(labels.size()) == n, "l4_loss: label count mismatch");
  check(cfg.top_k >= 1 && cfg.top_k <= k, "l4_loss: k must be in [1,K]");
  for (int64_t lab : labels)
    check(lab >= 0 && lab < k, "l4_loss: label out of range");

  const T lam = T(cfg.lambda);
  // patch scores sit strided along the class axis; gather each patch column
  auto gather = [&](int64_t img, int64_t p, T* dst) {
    for (int64_t i = 0; i < k; ++i)
      dst[i] = patch_logits.data()[(img * k + i) * wp + p];
  };

  Tensor<T> out(Shape{1});
  std::vector<T> col(static_cast<size_t>(k));
  T acc = T(0);
  for (int64_t img = 0; img < n; ++img) {
    for (int64_t p = 0; p < wp; ++p) {
      gather(img, p, col.data());
      const T softer = detail::softermax_row(col.data(), k, cfg.top_k, (T*)nullptr, T(0));
      const T ce = detail::ce_row(col.data(), k, labels[size_t(img)], (T*)nullptr, T(0));
      acc += lam * softer + (T(1) - lam) * ce;
    }
  }
  out.data()[0] = acc / T(n * wp);

  if (detail::tracing<T>({&patch_logits})) {
    LossConfig c = cfg;
    GradTape<T>::active()->record(out, [patch_logits, out, labels, c, lam, n, k, wp]() mutable {
      if (!out.has_grad() || !patch_logits.requires_grad()) return;
      const T scale = out.grad()[0] / T(n * wp);
      T* gx = patch_logits.ensure_grad();
      std::vector<T> col(static_cast<size_t>(k)), gcol(static_cast<size_t>(k));
      for (int64_t img = 0; img < n; ++img) {
        for (int64_t p = 0; p < wp; ++p) {
          for (int64_t i = 0; i < k; ++i)
            col[size_t(i)] = patch_logits.data()[(img * k + i) * wp + p];
          std::fill(gcol.begin(), gcol.end(), T(0));
          detail::softermax_row(col.data(), k, c.top_k, gcol.data(), scale * lam);
          detail::ce_row(col.data(), k, labels[size_t(img)], gcol.data(),
                         scale * (T(1) - lam));
          for (int64_t i = 0; i < k; ++i) gx[(img * k + i) * wp + p] += gcol[size_t(i)];
        }
      }
    });
  }
  detail::finish_op(out, "l4_loss");
  return out;
}

template <typename T>
struct TotalLoss {
  Tensor<T> total;                      // scalar on the tape
  std::array<double, 4> components{};   // L1..L4 values (0 where a branch is absent)
};

// Eq.-7 style weighted sum. Undefined tensors contribute nothing (single-
// branch ablation variants); every defined component is evaluated for logging
// even when its weight is zero.
template <typename T>
TotalLoss<T> total_loss(const Tensor<T>& y_gs, const Tensor<T>& y_pa, const Tensor<T>& y,
                        const Tensor<T>& patch_logits, const std::vector<int64_t>& labels,
                        const LossConfig& cfg) {
  cfg.validate();
  TotalLoss<T> result;
  Tensor<T> total = Tensor<T>::scalar(T(0));

  auto mix = [&](Tensor<T> part, double eta, int idx) {
    result.components[size_t(idx)] = double(part.item());
    if (eta != 0.0) total = add(total, scale(part, T(eta)));
  };

  if (y_gs.defined()) mix(cross_entropy(y_gs, labels), cfg.eta[0], 0);
  if (y_pa.defined()) mix(cross_entropy(y_pa, labels), cfg.eta[1], 1);
  check(y.defined(), "total_loss: fused output y is required");
  mix(cross_entropy(y, labels), cfg.eta[2], 2);
  if (patch_logits.defined()) mix(l4_loss(patch_logits, labels, cfg), cfg.eta[3], 3);

  result.total = total;
  return result;
}

}  // namespace pagg
