#include "pagg/gradcheck.hpp"

#include <cstdio>

#include "pagg/layers.hpp"
#include "pagg/losses.hpp"
#include "pagg/network.hpp"

namespace pagg {

double fd_max_rel_error(const std::function<Tensor<double>()>& loss,
                        std::vector<Tensor<double>> params, double step) {
  std::vector<std::vector<double>> analytic;
  {
    GradTape<double> tape;
    Tensor<double> l = loss();
    for (auto& p : params) p.zero_grad();
    tape.backward(l);
    for (auto& p : params) {
      if (p.has_grad())
        analytic.emplace_back(p.grad(), p.grad() + p.numel());
      else
        analytic.emplace_back(size_t(p.numel()), 0.0);
    }
  }

  double worst = 0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<double>& p = params[pi];
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double orig = p.data()[i];
      p.data()[i] = orig + step;
      const double f_plus = loss().item();
      p.data()[i] = orig - step;
      const double f_minus = loss().item();
      p.data()[i] = orig;
      const double numeric = (f_plus - f_minus) / (2.0 * step);
      const double a = analytic[pi][size_t(i)];
      const double rel =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

namespace {

struct Setup {
  std::vector<Tensor<double>> params;
  std::function<Tensor<double>()> loss;
};

struct Check {
  std::string name;
  double tolerance;
  double step;
  double margin_needed;
  std::function<Setup(uint64_t)> make;
};

// sum(out * R) folds any-shaped output into a sign-mixed scalar
Tensor<double> weighted_sum(const Tensor<double>& out, const Tensor<double>& mix) {
  return sum(mul(out, mix));
}

Tensor<double> mix_for(const Shape& shape, Rng& rng) {
  return Tensor<double>::randn(shape, rng, 1.0);
}

GradCheckResult run_check(const Check& check_def) {
  GradCheckResult result;
  result.op = check_def.name;
  result.tolerance = check_def.tolerance;
  for (uint64_t attempt = 0; attempt < 64; ++attempt) {
    const uint64_t seed = 1000 * (attempt + 1) + 17;
    Setup setup = check_def.make(seed);
    double margin;
    {
      KinkProbe probe;
      setup.loss();
      margin = probe.min_margin();
    }
    if (margin < check_def.margin_needed) continue;
    result.seed = seed;
    result.kink_margin = margin;
    result.max_rel_err = fd_max_rel_error(setup.loss, setup.params, check_def.step);
    for (const auto& p : setup.params) result.coords += p.numel();
    result.pass = result.max_rel_err < check_def.tolerance;
    return result;
  }
  result.pass = false;
  result.max_rel_err = std::numeric_limits<double>::infinity();
  result.op += " (no kink-avoiding seed found)";
  return result;
}

std::vector<Check> build_suite() {
  std::vector<Check> checks;
  const double tol = 1e-5;

  checks.push_back({"conv2d", tol, 1e-5, 0.0, [](uint64_t seed) {
    Rng rng(seed);
    auto x = Tensor<double>::randn({2, 3, 6, 7}, rng, 1.0, true);
    auto w = Tensor<double>::randn({4, 3, 3, 3}, rng, 0.5, true);
    auto b = Tensor<double>::randn({4}, rng, 0.5, true);
    auto mix = mix_for({2, 4, 6, 4}, rng);
    Setup s;
    s.params = {x, w, b};
    s.loss = [=]() { return weighted_sum(conv2d(x, w, b, 1, 2, 1, 1), mix); };
    return s;
  }});

  checks.push_back({"batch_norm", tol, 1e-5, 0.0, [](uint64_t seed) {
    Rng rng(seed);
    auto x = Tensor<double>::randn({3, 4, 2, 5}, rng, 1.0, true);
    auto bn = std::make_shared<BatchNorm2d<double>>(BatchNorm2d<double>::make(4));
    Rng init(seed + 1);
    bn->gamma = Tensor<double>::randn({4}, init, 0.3, true);
    bn->beta = Tensor<double>::randn({4}, init, 0.3, true);
    for (int64_t i = 0; i < 4; ++i) bn->gamma.data()[i] += 1.0;
    auto mix = mix_for({3, 4, 2, 5}, rng);
    Setup s;
    s.params = {x, bn->gamma, bn->beta};
    s.loss = [=]() { return weighted_sum(batch_norm(x, *bn, Mode::Train), mix); };
    return s;
  }});

  checks.push_back({"maxpool2x2", tol, 1e-5, 1e-3, [](uint64_t seed) {
    Rng rng(seed);
    auto x = Tensor<double>::randn({2, 3, 4, 6}, rng, 1.0, true);
    auto mix = mix_for({2, 3, 2, 3}, rng);
    Setup s;
    s.params = {x};
    s.loss = [=]() { return weighted_sum(maxpool2x2(x), mix); };
    return s;
  }});

  checks.push_back({"linear", tol, 1e-5, 0.0, [](uint64_t seed) {
    Rng rng(seed);
    auto x = Tensor<double>::randn({3, 4}, rng, 1.0, true);
    auto w = Tensor<double>::randn({4, 5}, rng, 0.5, true);
    auto b = Tensor<double>::randn({5}, rng, 0.5, true);
    auto mix = mix_for({3, 5}, rng);
    Setup s;
    s.params = {x, w, b};
    s.loss = [=]() { return weighted_sum(linear(x, w, b), mix); };
    return s;
  }});

  checks.push_back({"global_avg_pool", tol, 1e-5, 0.0, [](uint64_t seed) {
    Rng rng(seed);
    auto x = Tensor<double>::randn({2, 3, 4, 5}, rng, 1.0, true);
    auto mix = mix_for({2, 3}, rng);
    Setup s;
    s.params = {x};
    s.loss = [=]() { return weighted_sum(global_avg_pool(x), mix); };
    return s;
  }});

  checks.push_back({"global_max_pool", tol, 1e-5, 1e-3, [](uint64_t seed) {
    Rng rng(seed);
    auto x = Tensor<double>::randn({2, 3, 3, 4}, rng, 1.0, true);
    auto mix = mix_for({2, 3}, rng);
    Setup s;
    s.params = {x};
    s.loss = [=]() { return weighted_sum(global_max_pool(x), mix); };
    return s;
  }});

  checks.push_back({"softmax", tol, 1e-5, 0.0, [](uint64_t seed) {
    Rng rng(seed);
    auto x = Tensor<double>::randn({3, 5}, rng, 1.0, true);
    auto mix = mix_for({3, 5}, rng);
    Setup s;
    s.params = {x};
    s.loss = [=]() { return weighted_sum(softmax(x), mix); };
    return s;
  }});

  checks.push_back({"sigmoid", tol, 1e-5, 0.0, [](uint64_t seed) {
    Rng rng(seed);
    auto x = Tensor<double>::randn({2, 7}, rng, 1.5, true);
    auto mix = mix_for({2, 7}, rng);
    Setup s;
    s.params = {x};
    s.loss = [=]() { return weighted_sum(sigmoid(x), mix); };
    return s;
  }});

  checks.push_back({"relu", tol, 1e-5, 1e-3, [](uint64_t seed) {
    Rng rng(seed);
    auto x = Tensor<double>::randn({2, 9}, rng, 1.0, true);
    auto mix = mix_for({2, 9}, rng);
    Setup s;
    s.params = {x};
    s.loss = [=]() { return weighted_sum(relu(x), mix); };
    return s;
  }});

  checks.push_back({"dropout", tol, 1e-5, 0.0, [](uint64_t seed) {
    Rng rng(seed);
    auto x = Tensor<double>::randn({2, 8}, rng, 1.0, true);
    auto mix = mix_for({2, 8}, rng);
    Setup s;
    s.params = {x};
    // fresh rng per call: the mask is a fixed function of the seed
    s.loss = [=]() {
      Rng mask_rng(seed + 99);
      return weighted_sum(dropout(x, 0.3, Mode::Train, mask_rng), mix);
    };
    return s;
  }});

  checks.push_back({"cross_entropy", tol, 1e-5, 0.0, [](uint64_t seed) {
    Rng rng(seed);
    auto logits = Tensor<double>::randn({4, 5}, rng, 1.5, true);
    std::vector<int64_t> labels = {0, 2, 4, 1};
    Setup s;
    s.params = {logits};
    s.loss = [=]() { return cross_entropy(logits, labels); };
    return s;
  }});

  checks.push_back({"softermax", tol, 1e-5, 1e-3, [](uint64_t seed) {
    Rng rng(seed);
    auto x = Tensor<double>::randn({7}, rng, 1.5, true);
    Setup s;
    s.params = {x};
    s.loss = [=]() { return softermax(x, 3); };
    return s;
  }});

  checks.push_back({"l4", tol, 1e-5, 1e-3, [](uint64_t seed) {
    Rng rng(seed);
    auto patch_logits = Tensor<double>::randn({2, 4, 1, 3}, rng, 1.5, true);
    std::vector<int64_t> labels = {1, 3};
    LossConfig cfg;
    cfg.top_k = 2;
    cfg.lambda = 0.4;
    Setup s;
    s.params = {patch_logits};
    s.loss = [=]() { return l4_loss(patch_logits, labels, cfg); };
    return s;
  }});

  // Full two-branch model against the Eq.-7 objective. Dropout is disabled
  // so repeated forwards see the same function; everything else (BN in train
  // mode, both squeeze ops, fusion gate, all four losses) is live.
  checks.push_back({"fused_total", tol, 1e-7, 1e-4, [](uint64_t seed) {
    ModelConfig cfg;
    cfg.num_classes = 3;
    cfg.input_channels = 3;
    cfg.channel_scale = 1.0;
    cfg.backbone_plan = {4, 6, 8};
    cfg.branch_width = 12;
    cfg.pa_hidden = 6;
    cfg.pa_classifier_hidden = 5;
    cfg.dropout_rate = 0.0;
    auto model = std::make_shared<Model<double>>(Model<double>::build(cfg, Variant::GS_PA, seed));
    Rng rng(seed + 7);
    // zero-initialized biases sit exactly on relu kinks (preactivations of
    // fully clamped receptive fields equal the bias); jitter them so the
    // check runs at a generic point in parameter space
    for (auto& p : model->params()) {
      if (p.name.ends_with(".b") || p.name.ends_with(".beta"))
        for (int64_t i = 0; i < p.tensor.numel(); ++i)
          p.tensor.data()[i] += rng.uniform(-0.3, 0.3);
    }
    auto x = Tensor<double>::randn({2, 3, 32, 24}, rng, 1.0, false);
    std::vector<int64_t> labels = {0, 2};
    LossConfig loss_cfg;
    loss_cfg.top_k = 2;
    Setup s;
    for (auto& p : model->params()) s.params.push_back(p.tensor);
    s.loss = [=]() { return total_loss(model->forward(x, Mode::Train), labels, loss_cfg).total; };
    return s;
  }});

  return checks;
}

}  // namespace

std::vector<GradCheckResult> run_gradient_suite() {
  std::vector<GradCheckResult> results;
  for (const auto& check_def : build_suite()) results.push_back(run_check(check_def));
  return results;
}

std::string format_gradient_report(const std::vector<GradCheckResult>& results) {
  std::string out = "op               max_rel_err   tolerance  coords  kink_margin  status\n";
  char line[160];
  for (const auto& r : results) {
    std::snprintf(line, sizeof(line), "%-16s %.3e     %.0e     %-7lld %.3e    %s\n",
                  r.op.c_str(), r.max_rel_err, r.tolerance, (long long)r.coords,
                  r.kink_margin, r.pass ? "ok" : "FAIL");
    out += line;
  }
  return out;
}

bool gradient_suite_passes(const std::vector<GradCheckResult>& results) {
  for (const auto& r : results)
    if (!r.pass) return false;
  return !results.empty();
}

}  // namespace pagg
