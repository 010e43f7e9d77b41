#pragma once

#include <optional>
#include <sstream>
#include <string>

#include "pagg/layers.hpp"
#include "pagg/losses.hpp"

namespace pagg {

enum class Variant { GS, PA, GS_GS, GS_GMP, GS_PA };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::GS: return "GS";
    case Variant::PA: return "PA";
    case Variant::GS_GS: return "GS+GS";
    case Variant::GS_GMP: return "GS+GMP";
    case Variant::GS_PA: return "GS+PA";
  }
  fail("variant_name: bad variant");
}

inline Variant variant_from_name(const std::string& name) {
  if (name == "GS") return Variant::GS;
  if (name == "PA") return Variant::PA;
  if (name == "GS+GS") return Variant::GS_GS;
  if (name == "GS+GMP") return Variant::GS_GMP;
  if (name == "GS+PA") return Variant::GS_PA;
  fail("unknown model variant '" + name + "' (expected GS, PA, GS+GS, GS+GMP or GS+PA)");
}

struct ModelConfig {
  int64_t num_classes = 13;
  int64_t input_channels = 3;
  double channel_scale = 0.25;  // 1.0 restores the full published widths
  std::array<int64_t, 3> backbone_plan = {64, 128, 256};  // modules 1-2, 3-4, 5-6
  int64_t branch_width = 512;
  int64_t pa_hidden = 128;
  int64_t pa_classifier_hidden = 32;  // not affected by channel_scale
  double dropout_rate = 0.3;

  int64_t scaled(int64_t full) const {
    int64_t w = int64_t(std::llround(double(full) * channel_scale));
    return std::max<int64_t>(1, w);
  }
  int64_t c1() const { return scaled(backbone_plan[0]); }
  int64_t c2() const { return scaled(backbone_plan[1]); }
  int64_t c3() const { return scaled(backbone_plan[2]); }
  int64_t branch() const { return scaled(branch_width); }
  int64_t pa_mid() const { return scaled(pa_hidden); }

  void validate() const {
    check(num_classes >= 2, "ModelConfig: num_classes must be >= 2");
    check(input_channels >= 1, "ModelConfig: input_channels must be >= 1");
    check(channel_scale > 0.0, "ModelConfig: channel_scale must be > 0");
    check(pa_classifier_hidden >= 1, "ModelConfig: pa_classifier_hidden must be >= 1");
    check(dropout_rate >= 0.0 && dropout_rate < 1.0, "ModelConfig: dropout_rate in [0,1)");
  }

  // Spatial width of the module-8 output, i.e. the patch count.
  static int64_t patches_for_width(int64_t input_width) {
    const int64_t w8 = input_width / 8;   // three 2x2/stride-2 pools
    return (w8 - 1) / 2 + 1;              // module 8: kw=3, sw=2, pw=1
  }
};

template <typename T>
struct ForwardOutputs {
  Tensor<T> y_gs;          // [N,K] first-branch logits
  Tensor<T> y_pa;          // [N,K] second-branch logits (undefined for single-branch)
  Tensor<T> y;             // [N,K] fused prediction
  Tensor<T> patch_logits;  // [N,K,1,Wp] pre-softmax patch scores (PA variants)
  Tensor<T> patch_probs;   // [N,K,1,Wp] per-patch distributions
  Tensor<T> gamma;         // [N,1] fusion weight (two-branch variants)
};

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T> tensor;
  bool decay;  // weight decay applies to conv/linear weights only
};

template <typename T>
struct BufferRef {
  std::string name;
  Tensor<T> tensor;
};

namespace detail {

template <typename T>
struct ConvBnRelu {
  Conv2d<T> conv;
  BatchNorm2d<T> bn;

  static ConvBnRelu make(int64_t c_in, int64_t c_out, int64_t kh, int64_t kw, int64_t sh,
                         int64_t sw, int64_t ph, int64_t pw, Rng& rng) {
    ConvBnRelu m;
    m.conv = Conv2d<T>::make(c_in, c_out, kh, kw, sh, sw, ph, pw, rng);
    m.bn = BatchNorm2d<T>::make(c_out);
    return m;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    return relu(batch_norm(conv.forward(x), bn, mode));
  }
};

// Modules 7-8 are shared by every branch type.
template <typename T>
struct BranchStem {
  ConvBnRelu<T> m7, m8;

  static BranchStem make(int64_t c_in, int64_t width, Rng& rng) {
    BranchStem s;
    s.m7 = ConvBnRelu<T>::make(c_in, width, 3, 3, 1, 1, 0, 1, rng);
    s.m8 = ConvBnRelu<T>::make(width, width, 2, 3, 1, 2, 0, 1, rng);
    return s;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    return m8.forward(m7.forward(x, mode), mode);
  }
};

template <typename T>
struct GsBranch {
  BranchStem<T> stem;
  bool use_gmp = false;  // GS+GMP swaps the squeeze op, nothing else
  Linear<T> fc1, fc2;
  double dropout_rate = 0.3;

  static GsBranch make(const ModelConfig& cfg, bool use_gmp, Rng& rng) {
    GsBranch b;
    b.stem = BranchStem<T>::make(cfg.c3(), cfg.branch(), rng);
    b.use_gmp = use_gmp;
    b.fc1 = Linear<T>::make(cfg.branch(), cfg.branch(), rng);
    b.fc2 = Linear<T>::make(cfg.branch(), cfg.num_classes, rng);
    b.dropout_rate = cfg.dropout_rate;
    return b;
  }

  Tensor<T> forward(const Tensor<T>& shared, Mode mode, Rng& dropout_rng) {
    Tensor<T> fmap = stem.forward(shared, mode);
    Tensor<T> squeezed = use_gmp ? global_max_pool(fmap) : global_avg_pool(fmap);
    Tensor<T> h = dropout(relu(fc1.forward(squeezed)), dropout_rate, mode, dropout_rng);
    return fc2.forward(h);
  }
};

template <typename T>
struct PaResult {
  Tensor<T> logits;        // [N,K]
  Tensor<T> patch_logits;  // [N,K,1,Wp]
  Tensor<T> patch_probs;   // [N,K,1,Wp]
};

template <typename T>
struct PaBranch {
  BranchStem<T> stem;
  ConvBnRelu<T> m9;   // 1x1 conv to pa_hidden
  Conv2d<T> m10;      // 1x1 conv to K; no BN, no ReLU: patch scores stay unbounded
  Linear<T> cls1, cls2;

  static PaBranch make(const ModelConfig& cfg, Rng& rng) {
    PaBranch b;
    b.stem = BranchStem<T>::make(cfg.c3(), cfg.branch(), rng);
    b.m9 = ConvBnRelu<T>::make(cfg.branch(), cfg.pa_mid(), 1, 1, 1, 1, 0, 0, rng);
    b.m10 = Conv2d<T>::make(cfg.pa_mid(), cfg.num_classes, 1, 1, 1, 1, 0, 0, rng);
    b.cls1 = Linear<T>::make(cfg.num_classes, cfg.pa_classifier_hidden, rng);
    b.cls2 = Linear<T>::make(cfg.pa_classifier_hidden, cfg.num_classes, rng);
    return b;
  }

  PaResult<T> forward(const Tensor<T>& shared, Mode mode) {
    PaResult<T> r;
    Tensor<T> fmap = stem.forward(shared, mode);
    r.patch_logits = m10.forward(m9.forward(fmap, mode));
    r.patch_probs = softmax_channels(r.patch_logits);
    Tensor<T> aggregated = global_max_pool(r.patch_probs);
    r.logits = cls2.forward(relu(cls1.forward(aggregated)));
    return r;
  }
};

}  // namespace detail

template <typename T>
class Model {
 public:
  static Model build(const ModelConfig& cfg, Variant variant, uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg_ = cfg;
    m.variant_ = variant;
    Rng root(seed);

    Rng rng = root.child("backbone");
    const int64_t widths[6] = {cfg.c1(), cfg.c1(), cfg.c2(), cfg.c2(), cfg.c3(), cfg.c3()};
    int64_t in_ch = cfg.input_channels;
    for (int i = 0; i < 6; ++i) {
      m.backbone_.push_back(
          detail::ConvBnRelu<T>::make(in_ch, widths[i], 3, 3, 1, 1, 1, 1, rng));
      in_ch = widths[i];
    }

    Rng rng1 = root.child("branch1");
    Rng rng2 = root.child("branch2");
    switch (variant) {
      case Variant::GS:
        m.gs1_ = detail::GsBranch<T>::make(cfg, false, rng1);
        break;
      case Variant::PA:
        m.pa_ = detail::PaBranch<T>::make(cfg, rng1);
        break;
      case Variant::GS_GS:
        m.gs1_ = detail::GsBranch<T>::make(cfg, false, rng1);
        m.gs2_ = detail::GsBranch<T>::make(cfg, false, rng2);
        break;
      case Variant::GS_GMP:
        m.gs1_ = detail::GsBranch<T>::make(cfg, false, rng1);
        m.gs2_ = detail::GsBranch<T>::make(cfg, true, rng2);
        break;
      case Variant::GS_PA:
        m.gs1_ = detail::GsBranch<T>::make(cfg, false, rng1);
        m.pa_ = detail::PaBranch<T>::make(cfg, rng2);
        break;
    }
    if (m.two_branch()) {
      Rng rngf = root.child("fusion");
      m.fusion_ = Linear<T>::make(cfg.num_classes, 1, rngf);
    }
    m.dropout_rng_ = root.child("dropout");
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  Variant variant() const { return variant_; }
  bool two_branch() const { return variant_ != Variant::GS && variant_ != Variant::PA; }
  bool has_pa() const { return variant_ == Variant::PA || variant_ == Variant::GS_PA; }
  Rng& dropout_rng() { return dropout_rng_; }

  ForwardOutputs<T> forward(const Tensor<T>& images, Mode mode) {
    check(images.ndim() == 4, "Model::forward: input must be [N,C,32,W]");
    check(images.dim(1) == cfg_.input_channels, "Model::forward: channel count mismatch");
    check(images.dim(2) == 32, "Model::forward: input height must be 32, got " +
                                   std::to_string(images.dim(2)));

    Tensor<T> h = images;
    for (int i = 0; i < 6; ++i) {
      h = backbone_[size_t(i)].forward(h, mode);
      if (i == 1 || i == 3 || i == 5) h = maxpool2x2(h);
    }

    ForwardOutputs<T> out;
    switch (variant_) {
      case Variant::GS:
        out.y_gs = gs1_->forward(h, mode, dropout_rng_);
        out.y = out.y_gs;
        break;
      case Variant::PA: {
        auto pa = pa_->forward(h, mode);
        out.y_pa = pa.logits;
        out.patch_logits = pa.patch_logits;
        out.patch_probs = pa.patch_probs;
        out.y = pa.logits;
        break;
      }
      case Variant::GS_GS:
      case Variant::GS_GMP: {
        out.y_gs = gs1_->forward(h, mode, dropout_rng_);
        out.y_pa = gs2_->forward(h, mode, dropout_rng_);
        out.gamma = sigmoid(fusion_->forward(out.y_gs));
        out.y = rowwise_lerp(out.gamma, out.y_gs, out.y_pa);
        break;
      }
      case Variant::GS_PA: {
        out.y_gs = gs1_->forward(h, mode, dropout_rng_);
        auto pa = pa_->forward(h, mode);
        out.y_pa = pa.logits;
        out.patch_logits = pa.patch_logits;
        out.patch_probs = pa.patch_probs;
        out.gamma = sigmoid(fusion_->forward(out.y_gs));
        out.y = rowwise_lerp(out.gamma, out.y_gs, out.y_pa);
        break;
      }
    }
    return out;
  }

  std::vector<ParamRef<T>> params() {
    std::vector<ParamRef<T>> ps;
    auto conv = [&](const std::string& name, Conv2d<T>& c) {
      ps.push_back({name + ".w", c.w, true});
      ps.push_back({name + ".b", c.b, false});
    };
    auto bn = [&](const std::string& name, BatchNorm2d<T>& b) {
      ps.push_back({name + ".gamma", b.gamma, false});
      ps.push_back({name + ".beta", b.beta, false});
    };
    auto cbr = [&](const std::string& name, detail::ConvBnRelu<T>& m) {
      conv(name + ".conv", m.conv);
      bn(name + ".bn", m.bn);
    };
    auto fc = [&](const std::string& name, Linear<T>& l) {
      ps.push_back({name + ".w", l.w, true});
      ps.push_back({name + ".b", l.b, false});
    };
    auto stem = [&](const std::string& name, detail::BranchStem<T>& s) {
      cbr(name + ".m7", s.m7);
      cbr(name + ".m8", s.m8);
    };
    for (int i = 0; i < 6; ++i) cbr("backbone.m" + std::to_string(i + 1), backbone_[size_t(i)]);
    if (gs1_) {
      stem("gs1", gs1_->stem);
      fc("gs1.fc1", gs1_->fc1);
      fc("gs1.fc2", gs1_->fc2);
    }
    if (gs2_) {
      stem("gs2", gs2_->stem);
      fc("gs2.fc1", gs2_->fc1);
      fc("gs2.fc2", gs2_->fc2);
    }
    if (pa_) {
      stem("pa", pa_->stem);
      cbr("pa.m9", pa_->m9);
      conv("pa.m10", pa_->m10);
      fc("pa.cls1", pa_->cls1);
      fc("pa.cls2", pa_->cls2);
    }
    if (fusion_) fc("fusion", *fusion_);
    return ps;
  }

  std::vector<BufferRef<T>> buffers() {
    std::vector<BufferRef<T>> bs;
    auto bn = [&](const std::string& name, BatchNorm2d<T>& b) {
      bs.push_back({name + ".running_mean", b.running_mean});
      bs.push_back({name + ".running_var", b.running_var});
    };
    auto cbr = [&](const std::string& name, detail::ConvBnRelu<T>& m) { bn(name + ".bn", m.bn); };
    auto stem = [&](const std::string& name, detail::BranchStem<T>& s) {
      cbr(name + ".m7", s.m7);
      cbr(name + ".m8", s.m8);
    };
    for (int i = 0; i < 6; ++i) cbr("backbone.m" + std::to_string(i + 1), backbone_[size_t(i)]);
    if (gs1_) stem("gs1", gs1_->stem);
    if (gs2_) stem("gs2", gs2_->stem);
    if (pa_) {
      stem("pa", pa_->stem);
      cbr("pa.m9", pa_->m9);
    }
    return bs;
  }

  int64_t param_count() {
    int64_t total = 0;
    for (auto& p : params()) total += p.tensor.numel();
    return total;
  }

  void zero_grads() {
    for (auto& p : params()) p.tensor.zero_grad();
  }

  // Ordered text listing of layers for size reports and ablation diffs.
  std::string manifest() {
    std::ostringstream os;
    int idx = 0;
    auto row = [&](const std::string& name, const std::string& kind, int64_t nparams) {
      os << idx++ << "\t" << name << "\t" << kind << "\t" << nparams << "\n";
    };
    auto cbr = [&](const std::string& name, detail::ConvBnRelu<T>& m) {
      std::ostringstream kind;
      kind << "Conv " << m.conv.w.dim(1) << "->" << m.conv.w.dim(0) << " k" << m.conv.w.dim(2)
           << "x" << m.conv.w.dim(3) << " s" << m.conv.sh << "x" << m.conv.sw << " p"
           << m.conv.ph << "x" << m.conv.pw << " +BN +ReLU";
      row(name, kind.str(), m.conv.param_count() + m.bn.gamma.numel() + m.bn.beta.numel());
    };
    auto fc = [&](const std::string& name, Linear<T>& l, const std::string& suffix) {
      std::ostringstream kind;
      kind << "Linear " << l.w.dim(0) << "->" << l.w.dim(1) << suffix;
      row(name, kind.str(), l.param_count());
    };
    auto stem = [&](const std::string& name, detail::BranchStem<T>& s) {
      cbr(name + ".m7", s.m7);
      cbr(name + ".m8", s.m8);
    };
    for (int i = 0; i < 6; ++i) {
      cbr("backbone.m" + std::to_string(i + 1), backbone_[size_t(i)]);
      if (i == 1 || i == 3 || i == 5) row("backbone.pool" + std::to_string(i / 2 + 1),
                                          "MaxPool 2x2 s2x2", 0);
    }
    auto gs_branch = [&](const std::string& name, detail::GsBranch<T>& b) {
      stem(name, b.stem);
      row(name + ".squeeze", b.use_gmp ? "GMP" : "GAP", 0);
      fc(name + ".fc1", b.fc1, " +ReLU +Dropout(0.3)");
      fc(name + ".fc2", b.fc2, "");
    };
    if (gs1_) gs_branch("gs1", *gs1_);
    if (gs2_) gs_branch("gs2", *gs2_);
    if (pa_) {
      stem("pa", pa_->stem);
      cbr("pa.m9", pa_->m9);
      std::ostringstream kind;
      kind << "Conv " << pa_->m10.w.dim(1) << "->" << pa_->m10.w.dim(0) << " k1x1";
      row("pa.m10", kind.str(), pa_->m10.param_count());
      row("pa.softmax", "Softmax per patch", 0);
      row("pa.aggregate", "GMP", 0);
      fc("pa.cls1", pa_->cls1, " +ReLU");
      fc("pa.cls2", pa_->cls2, "");
    }
    if (fusion_) fc("fusion", *fusion_, " +Sigmoid");
    return os.str();
  }

 private:
  ModelConfig cfg_;
  Variant variant_ = Variant::GS_PA;
  std::vector<detail::ConvBnRelu<T>> backbone_;
  std::optional<detail::GsBranch<T>> gs1_, gs2_;
  std::optional<detail::PaBranch<T>> pa_;
  std::optional<Linear<T>> fusion_;
  Rng dropout_rng_;
};

template <typename T>
TotalLoss<T> total_loss(const ForwardOutputs<T>& out, const std::vector<int64_t>& labels,
                        const LossConfig& cfg) {
  // Single-branch variants emit their logits as y; supervising the same
  // tensor twice would double-count, so only L3 applies there.
  const bool fused = out.y_gs.defined() && out.y_pa.defined();
  return total_loss(fused ? out.y_gs : Tensor<T>(), fused ? out.y_pa : Tensor<T>(), out.y,
                    out.patch_logits, labels, cfg);
}

}  // namespace pagg
