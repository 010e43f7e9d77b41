#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "pagg/data.hpp"
#include "pagg/evaluator.hpp"
#include "pagg/gradcheck.hpp"
#include "pagg/network.hpp"
#include "pagg/runconfig.hpp"
#include "pagg/trainer.hpp"

namespace fs = std::filesystem;
using namespace pagg;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "cannot open " + path + " for writing");
  f << text;
}

Dataset load_split(const std::string& data_dir, const std::string& split) {
  const fs::path dir = fs::path(data_dir) / split;
  Dataset data = ingest_manifest(dir.string(), (dir / "manifest.tsv").string());
  const fs::path meta = dir / "meta.tsv";
  if (fs::exists(meta)) apply_meta(data, meta.string());
  return data;
}

struct CommonArgs {
  std::string config_path, data_dir, out_dir, checkpoint_path, variant;
  int64_t seed = -1;
  int64_t epochs = -1;
  double scale = -1;
};

RunConfig resolve_run_config(const CommonArgs& args) {
  RunConfig rc = args.config_path.empty() ? RunConfig() : RunConfig::load(args.config_path);
  if (args.seed >= 0) rc.seed = uint64_t(args.seed);
  if (args.epochs >= 0) rc.epochs = args.epochs;
  if (args.scale > 0) rc.model.channel_scale = args.scale;
  if (!args.variant.empty()) rc.variant = args.variant;
  variant_from_name(rc.variant);
  return rc;
}

int cmd_gen_data(const CommonArgs& args) {
  DatasetConfig cfg = DatasetConfig::load(args.config_path);
  if (args.seed >= 0) cfg.seed = uint64_t(args.seed);
  ScriptSet set = build_script_set(cfg);
  GeneratedData data = generate_dataset(set, cfg);
  write_dataset(args.out_dir, cfg, set, data);
  std::printf("wrote %zu train / %zu test lines across %lld scripts to %s\n",
              data.train.samples.size(), data.test.samples.size(),
              (long long)set.num_scripts(), args.out_dir.c_str());
  return 0;
}

int cmd_train(const CommonArgs& args) {
  RunConfig rc = resolve_run_config(args);
  Dataset all = load_split(args.data_dir, "train");
  rc.model.num_classes = int64_t(all.label_names.size());

  Dataset train_part, val_part;
  train_part.label_names = val_part.label_names = all.label_names;
  for (size_t i = 0; i < all.samples.size(); ++i) {
    if (i % 10 == 9)
      val_part.samples.push_back(all.samples[i]);
    else
      train_part.samples.push_back(all.samples[i]);
  }

  fs::create_directories(args.out_dir);
  write_text((fs::path(args.out_dir) / "config_resolved.json").string(),
             rc.to_json_string() + "\n");

  Model<float> model = Model<float>::build(rc.model, variant_from_name(rc.variant), rc.seed);
  std::printf("training %s, %lld parameters, %lld epochs, seed %llu\n", rc.variant.c_str(),
              (long long)model.param_count(), (long long)rc.epochs,
              (unsigned long long)rc.seed);
  write_text((fs::path(args.out_dir) / "layer_manifest.txt").string(), model.manifest());

  TrainResult result = train(model, train_part, val_part, rc.train_config(args.out_dir));
  if (!result.log.empty())
    std::printf("done: best val acc %.4f at epoch %lld\n", result.best_val_acc,
                (long long)result.best_epoch);
  return 0;
}

int cmd_eval(const CommonArgs& args) {
  RunConfig rc = resolve_run_config(args);
  Checkpoint ck = Checkpoint::load(args.checkpoint_path);
  Model<float> model = ck.restore_model();
  Dataset data = load_split(args.data_dir, "test");
  check(int64_t(data.label_names.size()) <= model.config().num_classes,
        "eval: dataset has more classes than the checkpointed model");
  EvalOptions opts = rc.eval;
  opts.measure_latency = true;
  EvalReport report = evaluate(model, data, rc.pipeline, opts);
  const std::string tsv = report.to_tsv(data.label_names);
  std::fputs(tsv.c_str(), stdout);
  if (!args.out_dir.empty()) {
    fs::create_directories(args.out_dir);
    write_text((fs::path(args.out_dir) / "report.tsv").string(), tsv);
    write_text((fs::path(args.out_dir) / "report.json").string(),
               report.to_json_string(data.label_names) + "\n");
    write_text((fs::path(args.out_dir) / "config_resolved.json").string(),
               rc.to_json_string() + "\n");
  }
  return 0;
}

AblationConfig ablation_config(const RunConfig& rc, const std::string& out_dir,
                               int64_t num_classes) {
  AblationConfig cfg;
  cfg.model = rc.model;
  cfg.model.num_classes = num_classes;
  cfg.loss = rc.loss;
  cfg.pipeline = rc.pipeline;
  cfg.epochs = rc.epochs;
  cfg.seeds = rc.ablation_seeds;
  cfg.out_dir = out_dir;
  return cfg;
}

int cmd_ablate(const CommonArgs& args, const std::string& variants_csv) {
  RunConfig rc = resolve_run_config(args);
  Dataset train_data = load_split(args.data_dir, "train");
  Dataset test_data = load_split(args.data_dir, "test");
  fs::create_directories(args.out_dir);
  write_text((fs::path(args.out_dir) / "config_resolved.json").string(),
             rc.to_json_string() + "\n");

  std::vector<std::string> variants;
  if (variants_csv.empty()) {
    variants = table_v_variants();
  } else {
    std::stringstream ss(variants_csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
      variant_from_name(item);
      variants.push_back(item);
    }
  }
  AblationConfig cfg = ablation_config(rc, args.out_dir, int64_t(train_data.label_names.size()));
  AblationTable table = run_ablation_suite(cfg, train_data, test_data, variants);
  std::fputs(table.to_tsv().c_str(), stdout);
  return 0;
}

int cmd_lambda_ablate(const CommonArgs& args) {
  RunConfig rc = resolve_run_config(args);
  Dataset train_data = load_split(args.data_dir, "train");
  Dataset test_data = load_split(args.data_dir, "test");
  fs::create_directories(args.out_dir);
  write_text((fs::path(args.out_dir) / "config_resolved.json").string(),
             rc.to_json_string() + "\n");
  AblationConfig cfg = ablation_config(rc, args.out_dir, int64_t(train_data.label_names.size()));
  AblationTable table = run_lambda_ablation(cfg, train_data, test_data, rc.lambda_sweep);
  std::fputs(table.to_tsv().c_str(), stdout);
  return 0;
}

int cmd_viz(const CommonArgs& args, const std::string& image_path, int64_t index) {
  RunConfig rc = resolve_run_config(args);
  Checkpoint ck = Checkpoint::load(args.checkpoint_path);
  Model<float> model = ck.restore_model();
  Image line;
  if (!image_path.empty()) {
    line = read_image(image_path);
  } else {
    Dataset data = load_split(args.data_dir, "test");
    check(index >= 0 && index < int64_t(data.samples.size()),
          "viz: --index out of range for the test split");
    line = data.samples[size_t(index)].image;
  }
  export_patch_visualization(model, line, rc.pipeline, args.out_dir);
  std::printf("wrote patch_probs.csv, gmp.csv, local_logits.csv, heatmap.pgm to %s\n",
              args.out_dir.c_str());
  return 0;
}

int cmd_grad_check() {
  auto results = run_gradient_suite();
  std::fputs(format_gradient_report(results).c_str(), stdout);
  return gradient_suite_passes(results) ? 0 : 1;
}

int cmd_inspect(const CommonArgs& args) {
  Checkpoint ck = Checkpoint::load(args.checkpoint_path);
  std::printf("variant: %s\n", variant_name(ck.variant).c_str());
  std::printf("classes: %lld   channel scale: %g\n", (long long)ck.config.num_classes,
              ck.config.channel_scale);
  std::printf("epoch: %lld   step: %lld   optimizer: %s", (long long)ck.epoch,
              (long long)ck.step, ck.has_optimizer ? "yes" : "no");
  if (ck.has_optimizer) std::printf(" (lr %.8g)", ck.lr);
  std::printf("\n");
  int64_t total = 0;
  for (const auto& [name, tensor] : ck.tensors) {
    std::printf("%-44s %-16s %lld\n", name.c_str(), shape_str(tensor.shape()).c_str(),
                (long long)tensor.numel());
    total += tensor.numel();
  }
  std::printf("total values: %lld (%.2f MB as f32)\n", (long long)total,
              double(total) * 4.0 / (1024.0 * 1024.0));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Patch Aggregator script identification: training, evaluation and ablations"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string variants_csv, image_path;
  int64_t viz_index = -1;

  auto add_common = [&](CLI::App* cmd, bool with_config, bool with_data, bool with_out) {
    if (with_config) cmd->add_option("--config", args.config_path, "JSON config path");
    if (with_data) cmd->add_option("--data", args.data_dir, "dataset directory");
    if (with_out) cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--seed", args.seed, "seed override");
    cmd->add_option("--epochs", args.epochs, "epoch override");
    cmd->add_option("--scale", args.scale, "channel scale override");
    cmd->add_option("--variant", args.variant, "model variant (GS, PA, GS+GS, GS+GMP, GS+PA)");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic multi-script dataset");
  add_common(gen, true, false, true);
  gen->get_option("--config")->required();
  gen->get_option("--out")->required();

  auto* tr = app.add_subcommand("train", "train a model on a dataset directory");
  add_common(tr, true, true, true);
  tr->get_option("--data")->required();
  tr->get_option("--out")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(ev, true, true, true);
  ev->add_option("--checkpoint", args.checkpoint_path, "checkpoint path")->required();
  ev->get_option("--data")->required();

  auto* ab = app.add_subcommand("ablate", "run the branch-contribution ablation suite");
  add_common(ab, true, true, true);
  ab->add_option("--variants", variants_csv, "comma-separated variant subset");
  ab->get_option("--data")->required();
  ab->get_option("--out")->required();

  auto* la = app.add_subcommand("lambda-ablate", "run the intermediate-supervision ablation");
  add_common(la, true, true, true);
  la->get_option("--data")->required();
  la->get_option("--out")->required();

  auto* vz = app.add_subcommand("viz", "export patch-probability visualizations");
  add_common(vz, true, true, true);
  vz->add_option("--checkpoint", args.checkpoint_path, "checkpoint path")->required();
  vz->add_option("--image", image_path, "single input image (.pgm/.png)");
  vz->add_option("--index", viz_index, "test-split sample index (with --data)");
  vz->get_option("--out")->required();

  auto* gc = app.add_subcommand("grad-check",
                                "finite-difference verification of every layer and loss");
  (void)gc;

  auto* in = app.add_subcommand("inspect-checkpoint", "print a checkpoint's manifest");
  in->add_option("--checkpoint", args.checkpoint_path, "checkpoint path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;  // usage errors exit 2; --help exits 0
  }

  try {
    if (gen->parsed()) return cmd_gen_data(args);
    if (tr->parsed()) return cmd_train(args);
    if (ev->parsed()) return cmd_eval(args);
    if (ab->parsed()) return cmd_ablate(args, variants_csv);
    if (la->parsed()) return cmd_lambda_ablate(args);
    if (vz->parsed()) return cmd_viz(args, image_path, viz_index);
    if (gc->parsed()) return cmd_grad_check();
    if (in->parsed()) return cmd_inspect(args);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
