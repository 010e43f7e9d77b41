#pragma once

// nlohmann converters for the config structs. Only .cpp files include this;
// public headers stay free of the vendored json.

#include <json.hpp>

#include "pagg/data.hpp"
#include "pagg/losses.hpp"
#include "pagg/network.hpp"
#include "pagg/trainer.hpp"

namespace pagg {

inline nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["num_classes"] = c.num_classes;
  j["input_channels"] = c.input_channels;
  j["channel_scale"] = c.channel_scale;
  j["backbone_plan"] = c.backbone_plan;
  j["branch_width"] = c.branch_width;
  j["pa_hidden"] = c.pa_hidden;
  j["pa_classifier_hidden"] = c.pa_classifier_hidden;
  j["dropout_rate"] = c.dropout_rate;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  if (j.contains("num_classes")) c.num_classes = j["num_classes"].get<int64_t>();
  if (j.contains("input_channels")) c.input_channels = j["input_channels"].get<int64_t>();
  if (j.contains("channel_scale")) c.channel_scale = j["channel_scale"].get<double>();
  if (j.contains("backbone_plan")) {
    auto plan = j["backbone_plan"].get<std::vector<int64_t>>();
    check(plan.size() == 3, "model config: backbone_plan must list 3 widths");
    std::copy(plan.begin(), plan.end(), c.backbone_plan.begin());
  }
  if (j.contains("branch_width")) c.branch_width = j["branch_width"].get<int64_t>();
  if (j.contains("pa_hidden")) c.pa_hidden = j["pa_hidden"].get<int64_t>();
  if (j.contains("pa_classifier_hidden"))
    c.pa_classifier_hidden = j["pa_classifier_hidden"].get<int64_t>();
  if (j.contains("dropout_rate")) c.dropout_rate = j["dropout_rate"].get<double>();
  c.validate();
  return c;
}

inline nlohmann::json to_json(const LossConfig& c) {
  nlohmann::json j;
  j["k"] = c.top_k;
  j["lambda"] = c.lambda;
  j["eta"] = c.eta;
  return j;
}

inline LossConfig loss_config_from_json(const nlohmann::json& j) {
  LossConfig c;
  if (j.contains("k")) c.top_k = j["k"].get<int64_t>();
  if (j.contains("lambda")) c.lambda = j["lambda"].get<double>();
  if (j.contains("eta")) {
    auto eta = j["eta"].get<std::vector<double>>();
    check(eta.size() == 4, "loss config: eta must list 4 weights");
    std::copy(eta.begin(), eta.end(), c.eta.begin());
  }
  c.validate();
  return c;
}

inline nlohmann::json to_json(const OptimConfig& c) {
  nlohmann::json j;
  j["lr_init"] = c.lr_init;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["patience"] = c.patience;
  j["improve_eps"] = c.improve_eps;
  j["decay_factor"] = c.decay_factor;
  j["reset_threshold"] = c.reset_threshold;
  j["reset_lr"] = c.reset_lr;
  return j;
}

inline OptimConfig optim_config_from_json(const nlohmann::json& j) {
  OptimConfig c;
  if (j.contains("lr_init")) c.lr_init = j["lr_init"].get<double>();
  if (j.contains("momentum")) c.momentum = j["momentum"].get<double>();
  if (j.contains("weight_decay")) c.weight_decay = j["weight_decay"].get<double>();
  if (j.contains("patience")) c.patience = j["patience"].get<int64_t>();
  if (j.contains("improve_eps")) c.improve_eps = j["improve_eps"].get<double>();
  if (j.contains("decay_factor")) c.decay_factor = j["decay_factor"].get<double>();
  if (j.contains("reset_threshold")) c.reset_threshold = j["reset_threshold"].get<double>();
  if (j.contains("reset_lr")) c.reset_lr = j["reset_lr"].get<double>();
  return c;
}

inline nlohmann::json to_json(const BucketTable& t) {
  nlohmann::json rules = nlohmann::json::array();
  for (const auto& r : t.rules) {
    nlohmann::json jr;
    if (std::isinf(r.upper))
      jr["upper"] = nullptr;
    else
      jr["upper"] = r.upper;
    jr["inclusive"] = r.upper_inclusive;
    jr["ratio"] = r.ratio;
    rules.push_back(jr);
  }
  nlohmann::json j;
  j["height"] = t.height;
  j["rules"] = rules;
  return j;
}

inline BucketTable bucket_table_from_json(const nlohmann::json& j) {
  BucketTable t;
  if (j.contains("height")) t.height = j["height"].get<int64_t>();
  if (j.contains("rules")) {
    t.rules.clear();
    for (const auto& jr : j["rules"]) {
      BucketTable::Rule r;
      r.upper = jr.contains("upper") && !jr["upper"].is_null()
                    ? jr["upper"].get<double>()
                    : std::numeric_limits<double>::infinity();
      r.upper_inclusive = jr.value("inclusive", false);
      r.ratio = jr.at("ratio").get<int64_t>();
      t.rules.push_back(r);
    }
  }
  t.validate();
  return t;
}

inline nlohmann::json to_json(const AugmentConfig& c) {
  nlohmann::json j;
  j["enabled"] = c.enabled;
  j["apply_prob"] = c.apply_prob;
  j["contrast_lo"] = c.contrast_lo;
  j["contrast_hi"] = c.contrast_hi;
  j["noise_sigma_max"] = c.noise_sigma_max;
  j["crop_frac"] = c.crop_frac;
  j["warp_frac"] = c.warp_frac;
  return j;
}

inline AugmentConfig augment_config_from_json(const nlohmann::json& j) {
  AugmentConfig c;
  if (j.contains("enabled")) c.enabled = j["enabled"].get<bool>();
  if (j.contains("apply_prob")) c.apply_prob = j["apply_prob"].get<double>();
  if (j.contains("contrast_lo")) c.contrast_lo = j["contrast_lo"].get<double>();
  if (j.contains("contrast_hi")) c.contrast_hi = j["contrast_hi"].get<double>();
  if (j.contains("noise_sigma_max")) c.noise_sigma_max = j["noise_sigma_max"].get<double>();
  if (j.contains("crop_frac")) c.crop_frac = j["crop_frac"].get<double>();
  if (j.contains("warp_frac")) c.warp_frac = j["warp_frac"].get<double>();
  return c;
}

inline nlohmann::json to_json(const PipelineConfig& c) {
  nlohmann::json j;
  j["batch_size"] = c.batch_size;
  j["channels"] = c.channels;
  j["buckets"] = to_json(c.buckets);
  j["augment"] = to_json(c.augment);
  return j;
}

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int64_t>();
  if (j.contains("channels")) c.channels = j["channels"].get<int64_t>();
  if (j.contains("buckets")) c.buckets = bucket_table_from_json(j["buckets"]);
  if (j.contains("augment")) c.augment = augment_config_from_json(j["augment"]);
  return c;
}

}  // namespace pagg
