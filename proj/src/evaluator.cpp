#include "pagg/evaluator.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "pagg/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace pagg {

namespace {

std::string fmt(double v, const char* spec = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

// argmax with lowest-index tie-breaking
int64_t argmax_row(const float* row, int64_t k) {
  int64_t best = 0;
  for (int64_t i = 1; i < k; ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "cannot open " + path + " for writing");
  f << text;
}

}  // namespace

double quick_accuracy(Model<float>& model, const Dataset& data, const PipelineConfig& pipeline) {
  if (data.samples.empty()) return 0.0;
  auto batches = make_epoch_batches(data, Mode::Eval, pipeline, 0, 0);
  const int64_t k = model.config().num_classes;
  int64_t correct = 0;
  for (auto& batch : batches) {
    auto out = model.forward(batch.images, Mode::Eval);
    for (size_t row = 0; row < batch.labels.size(); ++row) {
      if (argmax_row(out.y.data() + int64_t(row) * k, k) == batch.labels[row]) ++correct;
    }
  }
  return double(correct) / double(data.samples.size());
}

EvalReport evaluate(Model<float>& model, const Dataset& data, const PipelineConfig& pipeline,
                    const EvalOptions& opts) {
  const int64_t k = model.config().num_classes;
  for (const auto& s : data.samples)
    check(s.label >= 0 && s.label < k, "evaluate: dataset label exceeds model classes");

  EvalReport report;
  report.total = int64_t(data.samples.size());
  report.param_count = model.param_count();
  report.confusion.assign(size_t(k), std::vector<int64_t>(size_t(k), 0));
  report.class_support.assign(size_t(k), 0);

  PipelineConfig eval_pipeline = pipeline;
  eval_pipeline.batch_size = std::max<int64_t>(1, opts.micro_batch);
  auto batches = make_epoch_batches(data, Mode::Eval, eval_pipeline, 0, 0);

  int64_t correct = 0, hard_correct = 0, hard_total = 0;
  bool meta_known = true;
  for (auto& batch : batches) {
    auto out = model.forward(batch.images, Mode::Eval);
    for (size_t row = 0; row < batch.labels.size(); ++row) {
      const int64_t truth = batch.labels[row];
      const int64_t pred = argmax_row(out.y.data() + int64_t(row) * k, k);
      report.confusion[size_t(truth)][size_t(pred)]++;
      report.class_support[size_t(truth)]++;
      if (pred == truth) ++correct;
      const auto& meta = data.samples[size_t(batch.sample_indices[row])].meta;
      if (meta.disc_count < 0) meta_known = false;
      if (meta.hard) {
        ++hard_total;
        if (pred == truth) ++hard_correct;
      }
    }
  }

  report.overall_acc = report.total ? double(correct) / double(report.total) : 0.0;
  report.per_class_acc.assign(size_t(k), std::nullopt);
  for (int64_t c = 0; c < k; ++c) {
    if (report.class_support[size_t(c)] > 0)
      report.per_class_acc[size_t(c)] = double(report.confusion[size_t(c)][size_t(c)]) /
                                        double(report.class_support[size_t(c)]);
  }
  if (meta_known && hard_total > 0) {
    report.hard_acc = double(hard_correct) / double(hard_total);
    report.hard_total = hard_total;
  }

  if (opts.measure_latency && !data.samples.empty()) {
    std::vector<Tensor<float>> singles;
    const int64_t pool = std::min<int64_t>(int64_t(data.samples.size()), opts.latency_rounds);
    for (int64_t i = 0; i < pool; ++i) {
      Image resized = group_resize(data.samples[size_t(i)].image, pipeline.buckets);
      Tensor<float> chw = normalize(resized, pipeline.channels);
      Tensor<float> img(Shape{1, pipeline.channels, resized.h, resized.w});
      std::copy(chw.data(), chw.data() + chw.numel(), img.data());
      singles.push_back(img);
    }
    for (int64_t i = 0; i < opts.latency_warmup; ++i)
      model.forward(singles[size_t(i % pool)], Mode::Eval);
    std::vector<double> times;
    for (int64_t i = 0; i < opts.latency_rounds; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      model.forward(singles[size_t(i % pool)], Mode::Eval);
      const auto t1 = std::chrono::steady_clock::now();
      times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    report.latency_ms = times[times.size() / 2];
  }
  return report;
}

std::string EvalReport::to_tsv(const std::vector<std::string>& label_names) const {
  std::string out;
  out += "total\t" + std::to_string(total) + "\n";
  out += "overall_acc\t" + fmt(overall_acc) + "\n";
  out += "hard_total\t" + std::to_string(hard_total) + "\n";
  out += "hard_acc\t" + (hard_acc ? fmt(*hard_acc) : std::string("-")) + "\n";
  out += "param_count\t" + std::to_string(param_count) + "\n";
  out += "latency_ms\t" + (latency_ms ? fmt(*latency_ms, "%.4f") : std::string("-")) + "\n";
  out += "class\tsupport\taccuracy\n";
  for (size_t c = 0; c < per_class_acc.size(); ++c) {
    const std::string name = c < label_names.size() ? label_names[c] : std::to_string(c);
    out += name + "\t" + std::to_string(class_support[c]) + "\t" +
           (per_class_acc[c] ? fmt(*per_class_acc[c]) : std::string("-")) + "\n";
  }
  return out;
}

std::string EvalReport::to_json_string(const std::vector<std::string>& label_names) const {
  json j;
  j["total"] = total;
  j["overall_acc"] = overall_acc;
  if (hard_acc)
    j["hard"] = {{"total", hard_total}, {"acc", *hard_acc}};
  else
    j["hard"] = nullptr;
  j["param_count"] = param_count;
  if (latency_ms)
    j["latency_ms"] = *latency_ms;
  else
    j["latency_ms"] = nullptr;
  j["classes"] = json::array();
  for (size_t c = 0; c < per_class_acc.size(); ++c) {
    json jc;
    jc["name"] = c < label_names.size() ? label_names[c] : std::to_string(c);
    jc["support"] = class_support[c];
    if (per_class_acc[c])
      jc["acc"] = *per_class_acc[c];
    else
      jc["acc"] = nullptr;
    j["classes"].push_back(jc);
  }
  j["confusion"] = confusion;
  return j.dump(2);
}

// --- ablation harness ----------------------------------------------------------

std::vector<std::string> table_v_variants() { return {"GS", "GS+GS", "GS+GMP", "PA", "GS+PA"}; }

namespace {

double median(std::vector<double> values) {
  check(!values.empty(), "median: empty");
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::string sanitize(std::string s) {
  for (char& c : s) {
    if (c == '+') c = '_';
    if (c == '(' || c == ')' || c == '=' || c == '.') c = '-';
  }
  return s;
}

// Deterministic stratified holdout: every 10th sample validates.
void split_holdout(const Dataset& all, Dataset& train_part, Dataset& val_part) {
  train_part.label_names = all.label_names;
  val_part.label_names = all.label_names;
  for (size_t i = 0; i < all.samples.size(); ++i) {
    if (i % 10 == 9)
      val_part.samples.push_back(all.samples[i]);
    else
      train_part.samples.push_back(all.samples[i]);
  }
}

struct RunOutcome {
  double acc = 0;
  double hard_acc = 0;
};

RunOutcome run_or_resume(const AblationConfig& cfg, const std::string& variant_label,
                         Variant variant, const LossConfig& loss, uint64_t seed,
                         const Dataset& train_data, const Dataset& test_data) {
  const fs::path dir =
      fs::path(cfg.out_dir) / (sanitize(variant_label) + "_seed" + std::to_string(seed));
  const fs::path report_path = dir / "report.json";
  const fs::path last_ck = dir / "checkpoint_last.pagg";

  if (fs::exists(report_path)) {
    std::ifstream f(report_path);
    json j = json::parse(f);
    return {j.at("acc").get<double>(), j.at("hard_acc").get<double>()};
  }

  Model<float> model = Model<float>::build(cfg.model, variant, seed);
  bool trained = false;
  if (fs::exists(last_ck)) {
    Checkpoint ck = Checkpoint::load(last_ck.string());
    if (ck.epoch >= cfg.epochs) {
      ck.load_into(model);
      trained = true;
    }
  }
  if (!trained) {
    Dataset train_part, val_part;
    split_holdout(train_data, train_part, val_part);
    TrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.seed = seed;
    tc.loss = loss;
    tc.pipeline = cfg.pipeline;
    tc.out_dir = dir.string();
    train(model, train_part, val_part, tc);
  }

  EvalReport report = evaluate(model, test_data, cfg.pipeline);
  RunOutcome outcome{report.overall_acc, report.hard_acc.value_or(0.0)};
  fs::create_directories(dir);
  json j;
  j["variant"] = variant_label;
  j["seed"] = seed;
  j["epochs"] = cfg.epochs;
  j["acc"] = outcome.acc;
  j["hard_acc"] = outcome.hard_acc;
  j["param_count"] = report.param_count;
  write_text(report_path.string(), j.dump(2) + "\n");
  write_text((dir / "eval_report.json").string(), report.to_json_string(test_data.label_names));
  return outcome;
}

}  // namespace

double AblationTable::median_acc(const std::string& variant) const {
  std::vector<double> values;
  for (const auto& r : runs)
    if (r.variant == variant) values.push_back(r.acc);
  return median(values);
}

double AblationTable::median_hard_acc(const std::string& variant) const {
  std::vector<double> values;
  for (const auto& r : runs)
    if (r.variant == variant) values.push_back(r.hard_acc);
  return median(values);
}

std::string AblationTable::to_tsv() const {
  std::string out = "variant\tseed\tacc\thard_acc\n";
  for (const auto& r : runs)
    out += r.variant + "\t" + std::to_string(r.seed) + "\t" + fmt(r.acc) + "\t" +
           fmt(r.hard_acc) + "\n";
  out += "variant\tmedian_acc\tmedian_hard_acc\n";
  for (const auto& v : variants)
    out += v + "\t" + fmt(median_acc(v)) + "\t" + fmt(median_hard_acc(v)) + "\n";
  return out;
}

std::string AblationTable::to_json_string() const {
  json j;
  j["runs"] = json::array();
  for (const auto& r : runs)
    j["runs"].push_back(
        {{"variant", r.variant}, {"seed", r.seed}, {"acc", r.acc}, {"hard_acc", r.hard_acc}});
  j["median"] = json::object();
  for (const auto& v : variants)
    j["median"][v] = {{"acc", median_acc(v)}, {"hard_acc", median_hard_acc(v)}};
  return j.dump(2);
}

AblationTable run_ablation_suite(const AblationConfig& cfg, const Dataset& train_data,
                                 const Dataset& test_data, std::vector<std::string> variants) {
  check(cfg.seeds.size() >= 3, "run_ablation_suite: need at least 3 seeds");
  AblationTable table;
  table.variants = variants;
  for (const auto& name : variants) {
    const Variant variant = variant_from_name(name);
    for (uint64_t seed : cfg.seeds) {
      RunOutcome out = run_or_resume(cfg, name, variant, cfg.loss, seed, train_data, test_data);
      table.runs.push_back({name, seed, out.acc, out.hard_acc});
    }
  }
  if (!cfg.out_dir.empty()) {
    write_text((fs::path(cfg.out_dir) / "ablation_table.tsv").string(), table.to_tsv());
    write_text((fs::path(cfg.out_dir) / "ablation_table.json").string(),
               table.to_json_string() + "\n");
  }
  return table;
}

AblationTable run_lambda_ablation(const AblationConfig& cfg, const Dataset& train_data,
                                  const Dataset& test_data, std::vector<double> lambdas) {
  check(cfg.seeds.size() >= 3, "run_lambda_ablation: need at least 3 seeds");
  struct Condition {
    std::string label;
    LossConfig loss;
  };
  std::vector<Condition> conditions;
  {
    LossConfig no_l4 = cfg.loss;
    no_l4.eta[3] = 0.0;
    conditions.push_back({"no-L4", no_l4});
    LossConfig lam0 = cfg.loss;
    lam0.lambda = 0.0;
    conditions.push_back({"L4(lambda=0)", lam0});
    for (double lam : lambdas) {
      LossConfig c = cfg.loss;
      c.lambda = lam;
      char label[64];
      std::snprintf(label, sizeof(label), "L4(lambda=%g)", lam);
      conditions.push_back({label, c});
    }
  }

  AblationTable table;
  for (const auto& cond : conditions) table.variants.push_back(cond.label);
  for (const auto& cond : conditions) {
    for (uint64_t seed : cfg.seeds) {
      RunOutcome out = run_or_resume(cfg, cond.label, Variant::GS_PA, cond.loss, seed,
                                     train_data, test_data);
      table.runs.push_back({cond.label, seed, out.acc, out.hard_acc});
    }
  }
  if (!cfg.out_dir.empty()) {
    write_text((fs::path(cfg.out_dir) / "lambda_table.tsv").string(), table.to_tsv());
    write_text((fs::path(cfg.out_dir) / "lambda_table.json").string(),
               table.to_json_string() + "\n");
  }
  return table;
}

// --- visualization -----------------------------------------------------------------

namespace {

Tensor<float> line_to_tensor(const Image& line, const PipelineConfig& pipeline) {
  Image resized = group_resize(line, pipeline.buckets);
  Tensor<float> chw = normalize(resized, pipeline.channels);
  Tensor<float> img(Shape{1, pipeline.channels, resized.h, resized.w});
  std::copy(chw.data(), chw.data() + chw.numel(), img.data());
  return img;
}

}  // namespace

PatchVisualization visualize_patches(Model<float>& model, const Image& line,
                                     const PipelineConfig& pipeline) {
  check(model.has_pa(), "visualize_patches: model has no Patch Aggregator branch");
  Tensor<float> img = line_to_tensor(line, pipeline);
  auto out = model.forward(img, Mode::Eval);
  const int64_t k = out.patch_probs.dim(1);
  const int64_t wp = out.patch_probs.dim(2) * out.patch_probs.dim(3);

  PatchVisualization viz;
  viz.patch_probs.assign(size_t(k), std::vector<double>(size_t(wp)));
  viz.gmp.assign(size_t(k), 0.0);
  for (int64_t c = 0; c < k; ++c) {
    double best = -1;
    for (int64_t p = 0; p < wp; ++p) {
      const double v = double(out.patch_probs.data()[c * wp + p]);
      viz.patch_probs[size_t(c)][size_t(p)] = v;
      best = std::max(best, v);
    }
    viz.gmp[size_t(c)] = best;
  }
  for (int64_t c = 0; c < k; ++c) viz.local_logits.push_back(double(out.y_pa.data()[c]));

  // heatmap bands aligned with the patch grid over the resized line width
  const int64_t band = 12;
  const int64_t width = img.dim(3);
  viz.heatmap = Image(k * band, width);
  for (int64_t c = 0; c < k; ++c)
    for (int64_t x = 0; x < width; ++x) {
      const int64_t p = std::min(wp - 1, x * wp / width);
      const uint8_t v = uint8_t(std::lround(viz.patch_probs[size_t(c)][size_t(p)] * 255.0));
      for (int64_t y = 0; y < band; ++y) viz.heatmap.at(c * band + y, x) = v;
    }
  return viz;
}

void export_patch_visualization(Model<float>& model, const Image& line,
                                const PipelineConfig& pipeline, const std::string& out_dir) {
  PatchVisualization viz = visualize_patches(model, line, pipeline);
  fs::create_directories(out_dir);
  const size_t k = viz.patch_probs.size();
  const size_t wp = k ? viz.patch_probs[0].size() : 0;

  std::string csv = "class";
  for (size_t p = 0; p < wp; ++p) csv += ",patch_" + std::to_string(p);
  csv += "\n";
  for (size_t c = 0; c < k; ++c) {
    csv += std::to_string(c);
    for (size_t p = 0; p < wp; ++p) csv += "," + fmt(viz.patch_probs[c][p]);
    csv += "\n";
  }
  write_text((fs::path(out_dir) / "patch_probs.csv").string(), csv);

  std::string gmp = "class,value\n";
  for (size_t c = 0; c < k; ++c) gmp += std::to_string(c) + "," + fmt(viz.gmp[c]) + "\n";
  write_text((fs::path(out_dir) / "gmp.csv").string(), gmp);

  std::string logits = "class,value\n";
  for (size_t c = 0; c < k; ++c)
    logits += std::to_string(c) + "," + fmt(viz.local_logits[c]) + "\n";
  write_text((fs::path(out_dir) / "local_logits.csv").string(), logits);

  write_pgm((fs::path(out_dir) / "heatmap.pgm").string(), viz.heatmap);
}

FlipCheckResult flip_check(Model<float>& model, const ScriptSet& set,
                           const PipelineConfig& pipeline, int64_t n_pairs, int64_t length,
                           uint64_t seed) {
  check(model.has_pa(), "flip_check: model has no Patch Aggregator branch");
  auto pairs = make_flip_pairs(set, n_pairs, length, seed);
  FlipCheckResult result;
  for (const auto& pair : pairs) {
    auto gmp_entry = [&](const Image& img) {
      Tensor<float> t = line_to_tensor(img, pipeline);
      auto out = model.forward(t, Mode::Eval);
      const int64_t wp = out.patch_probs.dim(2) * out.patch_probs.dim(3);
      const float* row = out.patch_probs.data() + pair.script * wp;
      float best = row[0];
      for (int64_t p = 1; p < wp; ++p) best = std::max(best, row[p]);
      return best;
    };
    const float base = gmp_entry(pair.base);
    const float extended = gmp_entry(pair.extended);
    ++result.pairs;
    if (extended > base) ++result.increased;
  }
  return result;
}

}  // namespace pagg
