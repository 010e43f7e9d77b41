#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pagg/data.hpp"
#include "pagg/network.hpp"

namespace pagg {

struct EvalReport {
  int64_t total = 0;
  double overall_acc = 0;
  std::vector<std::optional<double>> per_class_acc;  // nullopt: class absent from split
  std::vector<int64_t> class_support;
  std::vector<std::vector<int64_t>> confusion;  // [true][predicted]
  std::optional<double> hard_acc;               // meta-defined hard split, when known
  int64_t hard_total = 0;
  int64_t param_count = 0;
  std::optional<double> latency_ms;  // median single-image forward

  std::string to_tsv(const std::vector<std::string>& label_names) const;
  std::string to_json_string(const std::vector<std::string>& label_names) const;
};

struct EvalOptions {
  int64_t micro_batch = 32;
  bool measure_latency = false;
  int64_t latency_warmup = 10;
  int64_t latency_rounds = 100;
};

EvalReport evaluate(Model<float>& model, const Dataset& data, const PipelineConfig& pipeline,
                    const EvalOptions& opts = {});

// Overall argmax accuracy only; used for per-epoch validation.
double quick_accuracy(Model<float>& model, const Dataset& data, const PipelineConfig& pipeline);

// --- ablation harness -----------------------------------------------------------

struct TrainConfig;  // trainer.hpp

struct AblationRun {
  std::string variant;
  uint64_t seed = 0;
  double acc = 0;
  double hard_acc = 0;
};

struct AblationTable {
  std::vector<std::string> variants;
  std::vector<AblationRun> runs;
  double median_acc(const std::string& variant) const;
  double median_hard_acc(const std::string& variant) const;
  std::string to_tsv() const;
  std::string to_json_string() const;
};

// Table-V column set; ablation suites default to all five.
std::vector<std::string> table_v_variants();

struct AblationConfig {
  ModelConfig model;
  LossConfig loss;
  PipelineConfig pipeline;
  int64_t epochs = 30;
  std::vector<uint64_t> seeds = {1, 2, 3};
  std::string out_dir;
};

// Trains every requested variant per seed (identical data and schedule) and
// reports per-seed plus median accuracy, overall and on the hard split.
// Finished runs found under out_dir are reused rather than retrained.
AblationTable run_ablation_suite(const AblationConfig& cfg, const Dataset& train_data,
                                 const Dataset& test_data,
                                 std::vector<std::string> variants = table_v_variants());

// Loss-config conditions of the intermediate-supervision study:
// no-L4, L4 with lambda = 0, L4 with each requested lambda.
AblationTable run_lambda_ablation(const AblationConfig& cfg, const Dataset& train_data,
                                  const Dataset& test_data,
                                  std::vector<double> lambdas = {0.4});

// --- patch-level visualization ----------------------------------------------------

struct PatchVisualization {
  std::vector<std::vector<double>> patch_probs;  // [K][Wp]
  std::vector<double> gmp;                        // [K]
  std::vector<double> local_logits;               // [K] y_pa
  Image heatmap;  // one band per class, columns aligned with patch positions
};

PatchVisualization visualize_patches(Model<float>& model, const Image& line,
                                     const PipelineConfig& pipeline);

// Writes patch_probs.csv, gmp.csv, local_logits.csv and heatmap.pgm.
void export_patch_visualization(Model<float>& model, const Image& line,
                                const PipelineConfig& pipeline, const std::string& out_dir);

// Paired ambiguous-vs-extended lines: counts how often appending one
// discriminative glyph strictly raises the GMP entry of the true script.
struct FlipCheckResult {
  int64_t pairs = 0;
  int64_t increased = 0;
  double fraction() const { return pairs ? double(increased) / double(pairs) : 0.0; }
};

FlipCheckResult flip_check(Model<float>& model, const ScriptSet& set,
                           const PipelineConfig& pipeline, int64_t n_pairs, int64_t length,
                           uint64_t seed);

}  // namespace pagg
