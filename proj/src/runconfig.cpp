#include "pagg/runconfig.hpp"

#include <fstream>
#include <sstream>

#include "pagg/config_json.hpp"

using json = nlohmann::ordered_json;

namespace pagg {

RunConfig RunConfig::from_json_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(std::string("run config: invalid JSON: ") + e.what());
  }
  RunConfig cfg;
  if (j.contains("model")) {
    cfg.model = model_config_from_json(j["model"]);
    if (j["model"].contains("variant")) cfg.variant = j["model"]["variant"].get<std::string>();
  }
  if (j.contains("loss")) cfg.loss = loss_config_from_json(j["loss"]);
  if (j.contains("data")) cfg.pipeline = pipeline_config_from_json(j["data"]);
  if (j.contains("trainer")) {
    const auto& jt = j["trainer"];
    cfg.optim = optim_config_from_json(jt);
    if (jt.contains("epochs")) cfg.epochs = jt["epochs"].get<int64_t>();
    if (jt.contains("seed")) cfg.seed = jt["seed"].get<uint64_t>();
    if (jt.contains("log_steps")) cfg.log_steps = jt["log_steps"].get<bool>();
    if (jt.contains("ablation_seeds"))
      cfg.ablation_seeds = jt["ablation_seeds"].get<std::vector<uint64_t>>();
    if (jt.contains("lambda_sweep"))
      cfg.lambda_sweep = jt["lambda_sweep"].get<std::vector<double>>();
  }
  if (j.contains("eval")) {
    const auto& je = j["eval"];
    if (je.contains("micro_batch")) cfg.eval.micro_batch = je["micro_batch"].get<int64_t>();
    if (je.contains("measure_latency"))
      cfg.eval.measure_latency = je["measure_latency"].get<bool>();
    if (je.contains("latency_warmup"))
      cfg.eval.latency_warmup = je["latency_warmup"].get<int64_t>();
    if (je.contains("latency_rounds"))
      cfg.eval.latency_rounds = je["latency_rounds"].get<int64_t>();
  }
  variant_from_name(cfg.variant);  // validate early
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), "run config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_json_string(ss.str());
}

std::string RunConfig::to_json_string() const {
  json j;
  json jm = to_json(model);
  jm["variant"] = variant;
  j["model"] = jm;
  j["loss"] = to_json(loss);
  j["data"] = to_json(pipeline);
  json jt = to_json(optim);
  jt["epochs"] = epochs;
  jt["seed"] = seed;
  jt["log_steps"] = log_steps;
  jt["ablation_seeds"] = ablation_seeds;
  jt["lambda_sweep"] = lambda_sweep;
  j["trainer"] = jt;
  json je;
  je["micro_batch"] = eval.micro_batch;
  je["measure_latency"] = eval.measure_latency;
  je["latency_warmup"] = eval.latency_warmup;
  je["latency_rounds"] = eval.latency_rounds;
  j["eval"] = je;
  return j.dump(2);
}

TrainConfig RunConfig::train_config(const std::string& out_dir) const {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.seed = seed;
  tc.optim = optim;
  tc.loss = loss;
  tc.pipeline = pipeline;
  tc.out_dir = out_dir;
  tc.log_steps = log_steps;
  return tc;
}

}  // namespace pagg
