#pragma once

#include <map>
#include <string>
#include <vector>

#include "pagg/data.hpp"
#include "pagg/network.hpp"

namespace pagg {

struct OptimConfig {
  double lr_init = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;  // conv/linear weights only
  int64_t patience = 5;        // epochs without improvement before decaying
  double improve_eps = 1e-4;
  double decay_factor = 0.3;
  double reset_threshold = 8e-5;  // lr below this resets to reset_lr
  double reset_lr = 0.01;
};

struct OptimState {
  OptimConfig cfg;
  double lr = 0.1;
  std::vector<Tensor<float>> momenta;  // aligned with the param list
  double plateau_best = 1e300;
  int64_t plateau_since = 0;

  static OptimState init(const OptimConfig& cfg, std::vector<ParamRef<float>>& params);
};

// v <- momentum * v + (g + weight_decay * w); w <- w - lr * v
void sgd_step(std::vector<ParamRef<float>>& params, OptimState& state);

// Called once per epoch with the epoch-mean training loss. Decays on plateau
// and resets once the rate falls below the threshold. Returns the new lr.
double lr_schedule(OptimState& state, double epoch_loss);

struct TrainConfig {
  int64_t epochs = 30;
  uint64_t seed = 1;
  OptimConfig optim;
  LossConfig loss;
  PipelineConfig pipeline;
  std::string out_dir;     // empty: keep everything in memory
  bool log_steps = true;
  double early_stop_train_acc = 0.0;  // > 0: stop once train accuracy reaches it
};

struct EpochStats {
  int64_t epoch = 0;
  double lr = 0;
  std::array<double, 4> components{};
  double total = 0;
  double val_acc = 0;
};

struct TrainResult {
  std::vector<EpochStats> log;
  int64_t best_epoch = -1;
  double best_val_acc = 0;
  int64_t steps = 0;
};

TrainResult train(Model<float>& model, const Dataset& train_data, const Dataset& val_data,
                  const TrainConfig& cfg);

// --- checkpoints ---------------------------------------------------------------
//
// File layout: "PAGG" magic, u32 version, u64 header length, JSON header
// (config + tensor name -> shape/offset manifest), then raw little-endian
// 32-bit floats.

struct Checkpoint {
  ModelConfig config;
  Variant variant = Variant::GS_PA;
  int64_t epoch = 0;
  int64_t step = 0;
  bool has_optimizer = false;
  OptimConfig optim_cfg;
  double lr = 0;
  double plateau_best = 1e300;
  int64_t plateau_since = 0;
  std::string dropout_rng_state;
  std::map<std::string, Tensor<float>> tensors;  // params, buffers, momentum

  static Checkpoint capture(Model<float>& model, const OptimState* optim, int64_t epoch,
                            int64_t step);
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  // Rebuilds the model (and optionally the optimizer) from the stored state.
  Model<float> restore_model() const;
  OptimState restore_optimizer(std::vector<ParamRef<float>>& params) const;

  // Copies stored tensors into an existing model; shapes must match.
  void load_into(Model<float>& model) const;
};

}  // namespace pagg
