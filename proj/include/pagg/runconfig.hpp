#pragma once

#include <string>
#include <vector>

#include "pagg/data.hpp"
#include "pagg/evaluator.hpp"
#include "pagg/network.hpp"
#include "pagg/trainer.hpp"

namespace pagg {

// Merged JSON run configuration (model / loss / data / trainer / eval
// sections). A resolved copy is written into every run directory so any
// artifact can be reproduced from its own folder.
struct RunConfig {
  ModelConfig model;
  std::string variant = "GS+PA";
  LossConfig loss;
  OptimConfig optim;
  PipelineConfig pipeline;
  int64_t epochs = 30;
  uint64_t seed = 1;
  bool log_steps = true;
  EvalOptions eval;
  std::vector<uint64_t> ablation_seeds = {1, 2, 3};
  std::vector<double> lambda_sweep = {0.4};

  static RunConfig from_json_string(const std::string& text);
  static RunConfig load(const std::string& path);
  std::string to_json_string() const;

  TrainConfig train_config(const std::string& out_dir) const;
};

}  // namespace pagg
