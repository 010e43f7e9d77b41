#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pagg/tensor.hpp"

namespace pagg {

// Central finite differences against the recorded backward pass, evaluated
// in 64-bit mode. Relative error uses max(1, |analytic|, |numeric|) as the
// denominator.
double fd_max_rel_error(const std::function<Tensor<double>()>& loss,
                        std::vector<Tensor<double>> params, double step);

struct GradCheckResult {
  std::string op;
  double max_rel_err = 0;
  double tolerance = 0;
  int64_t coords = 0;     // perturbed coordinates
  uint64_t seed = 0;      // accepted input seed
  double kink_margin = 0; // certified distance to the nearest subgradient kink
  bool pass = false;
};

// Every layer and loss: conv, BN, maxpool, linear, GAP, GMP, softmax,
// sigmoid, CE, softermax, L4 and the fused total objective. Inputs are
// random but kink-avoiding: seeds are advanced until the forward pass
// certifies a margin around every relu/max/top-k decision.
std::vector<GradCheckResult> run_gradient_suite();

std::string format_gradient_report(const std::vector<GradCheckResult>& results);
bool gradient_suite_passes(const std::vector<GradCheckResult>& results);

}  // namespace pagg
