#include "pagg/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "pagg/config_json.hpp"
#include "pagg/evaluator.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;  // std::map keys: canonical, sorted dumps

namespace pagg {

OptimState OptimState::init(const OptimConfig& cfg, std::vector<ParamRef<float>>& params) {
  OptimState st;
  st.cfg = cfg;
  st.lr = cfg.lr_init;
  for (auto& p : params) st.momenta.emplace_back(p.tensor.shape());
  return st;
}

void sgd_step(std::vector<ParamRef<float>>& params, OptimState& state) {
  check(params.size() == state.momenta.size(), "sgd_step: state/param mismatch");
  const float lr = float(state.lr);
  const float mu = float(state.cfg.momentum);
  const float wd = float(state.cfg.weight_decay);
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    check(p.tensor.has_grad(), "sgd_step: parameter " + p.name + " has no gradient");
    const float* g = p.tensor.grad();
    float* w = p.tensor.data();
    float* v = state.momenta[i].data();
    const int64_t n = p.tensor.numel();
    const float decay = p.decay ? wd : 0.0f;
    for (int64_t j = 0; j < n; ++j) {
      const float grad = g[j] + decay * w[j];
      if (!std::isfinite(grad))
        fail("sgd_step: non-finite gradient in " + p.name + " at index " + std::to_string(j));
      v[j] = mu * v[j] + grad;
      w[j] -= lr * v[j];
    }
  }
}

double lr_schedule(OptimState& state, double epoch_loss) {
  if (epoch_loss < state.plateau_best - state.cfg.improve_eps) {
    state.plateau_best = epoch_loss;
    state.plateau_since = 0;
  } else {
    ++state.plateau_since;
    if (state.plateau_since >= state.cfg.patience) {
      state.lr *= state.cfg.decay_factor;
      state.plateau_since = 0;
    }
  }
  if (state.lr < state.cfg.reset_threshold) state.lr = state.cfg.reset_lr;
  return state.lr;
}

namespace {

std::string fmt(double v, const char* spec = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "cannot open " + path + " for writing");
  f << text;
}

}  // namespace

TrainResult train(Model<float>& model, const Dataset& train_data, const Dataset& val_data,
                  const TrainConfig& cfg) {
  check(cfg.epochs >= 0, "train: epochs must be >= 0");
  cfg.loss.validate();
  auto params = model.params();
  OptimState state = OptimState::init(cfg.optim, params);

  const bool to_disk = !cfg.out_dir.empty();
  if (to_disk) fs::create_directories(cfg.out_dir);

  std::string step_log;
  std::string epoch_log = "epoch\tlr\tl1\tl2\tl3\tl4\ttotal\tval_acc\n";

  TrainResult result;
  int64_t step = 0;

  auto save = [&](const char* name, int64_t epoch) {
    if (!to_disk) return;
    Checkpoint::capture(model, &state, epoch, step)
        .save((fs::path(cfg.out_dir) / name).string());
  };

  save("checkpoint_last.pagg", 0);  // 0-epoch contract: an initialized checkpoint exists

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto batches = make_epoch_batches(train_data, Mode::Train, cfg.pipeline, epoch, cfg.seed);
    check(!batches.empty(), "train: no usable batches (dataset too small?)");

    double loss_sum = 0;
    std::array<double, 4> comp_sum{};
    for (auto& batch : batches) {
      GradTape<float> tape;
      auto outputs = model.forward(batch.images, Mode::Train);
      TotalLoss<float> loss = total_loss(outputs, batch.labels, cfg.loss);
      const double total = double(loss.total.item());
      if (!std::isfinite(total)) {
        save("checkpoint_last.pagg", epoch);
        fail("train: loss diverged (non-finite) at step " + std::to_string(step) +
             "; last checkpoint kept");
      }
      model.zero_grads();
      tape.backward(loss.total);
      sgd_step(params, state);

      loss_sum += total;
      for (int i = 0; i < 4; ++i) comp_sum[size_t(i)] += loss.components[size_t(i)];
      if (cfg.log_steps) {
        step_log += std::to_string(step) + "\t" + fmt(state.lr, "%.8g") + "\t" +
                    fmt(loss.components[0]) + "\t" + fmt(loss.components[1]) + "\t" +
                    fmt(loss.components[2]) + "\t" + fmt(loss.components[3]) + "\t" +
                    fmt(total) + "\n";
      }
      ++step;
    }

    const double nb = double(batches.size());
    const double epoch_loss = loss_sum / nb;
    const double val_acc = quick_accuracy(model, val_data, cfg.pipeline);

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = state.lr;
    for (int i = 0; i < 4; ++i) stats.components[size_t(i)] = comp_sum[size_t(i)] / nb;
    stats.total = epoch_loss;
    stats.val_acc = val_acc;
    result.log.push_back(stats);

    epoch_log += std::to_string(epoch) + "\t" + fmt(stats.lr, "%.8g") + "\t" +
                 fmt(stats.components[0]) + "\t" + fmt(stats.components[1]) + "\t" +
                 fmt(stats.components[2]) + "\t" + fmt(stats.components[3]) + "\t" +
                 fmt(stats.total) + "\t" + fmt(val_acc) + "\n";

    if (val_acc > result.best_val_acc || result.best_epoch < 0) {
      result.best_val_acc = val_acc;
      result.best_epoch = epoch;
      save("checkpoint_best.pagg", epoch + 1);
    }
    lr_schedule(state, epoch_loss);

    if (cfg.early_stop_train_acc > 0.0 &&
        quick_accuracy(model, train_data, cfg.pipeline) >= cfg.early_stop_train_acc)
      break;
  }

  save("checkpoint_last.pagg", cfg.epochs);
  result.steps = step;
  if (to_disk) {
    write_text((fs::path(cfg.out_dir) / "train_log.tsv").string(), epoch_log);
    if (cfg.log_steps) write_text((fs::path(cfg.out_dir) / "steps.tsv").string(), step_log);
  }
  return result;
}

// --- checkpoint io -----------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'P', 'A', 'G', 'G'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const uint8_t* p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= uint32_t(p[i]) << (8 * i);
  return v;
}

uint64_t get_u64(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(p[i]) << (8 * i);
  return v;
}

}  // namespace

Checkpoint Checkpoint::capture(Model<float>& model, const OptimState* optim, int64_t epoch,
                               int64_t step) {
  Checkpoint ck;
  ck.config = model.config();
  ck.variant = model.variant();
  ck.epoch = epoch;
  ck.step = step;
  ck.dropout_rng_state = model.dropout_rng().serialize();
  auto params = model.params();
  for (auto& p : params) ck.tensors["model." + p.name] = p.tensor;
  for (auto& b : model.buffers()) ck.tensors["model." + b.name] = b.tensor;
  if (optim) {
    ck.has_optimizer = true;
    ck.optim_cfg = optim->cfg;
    ck.lr = optim->lr;
    ck.plateau_best = optim->plateau_best;
    ck.plateau_since = optim->plateau_since;
    for (size_t i = 0; i < params.size(); ++i)
      ck.tensors["opt.momentum." + params[i].name] = optim->momenta[i];
  }
  return ck;
}

void Checkpoint::save(const std::string& path) const {
  json header;
  header["config"] = to_json(config);
  header["variant"] = variant_name(variant);
  header["counters"] = {{"epoch", epoch}, {"step", step}};
  header["rng"] = {{"dropout", dropout_rng_state}};
  if (has_optimizer) {
    json opt = to_json(optim_cfg);
    opt["lr"] = lr;
    opt["plateau_best"] = plateau_best;
    opt["plateau_since"] = plateau_since;
    header["optimizer"] = opt;
  }
  json manifest;
  uint64_t offset = 0;
  for (const auto& [name, tensor] : tensors) {  // std::map: sorted, canonical order
    manifest[name] = {{"shape", tensor.shape()}, {"offset", offset}};
    offset += uint64_t(tensor.numel()) * sizeof(float);
  }
  header["tensors"] = manifest;

  const std::string header_text = header.dump();
  std::string blob;
  blob.reserve(16 + header_text.size() + offset);
  blob.append(kMagic, 4);
  put_u32(blob, kVersion);
  put_u64(blob, uint64_t(header_text.size()));
  blob += header_text;
  for (const auto& [name, tensor] : tensors) {
    const char* bytes = reinterpret_cast<const char*>(tensor.data());
    blob.append(bytes, size_t(tensor.numel()) * sizeof(float));
  }
  write_text(path, blob);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "checkpoint: cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  check(bytes.size() >= 16, "checkpoint: " + path + " is truncated");
  check(std::memcmp(bytes.data(), kMagic, 4) == 0,
        "checkpoint: " + path + " has a bad magic (not a PAGG checkpoint)");
  const uint32_t version = get_u32(&bytes[4]);
  check(version == kVersion, "checkpoint: unsupported format version " +
                                 std::to_string(version) + " in " + path);
  const uint64_t header_len = get_u64(&bytes[8]);
  check(16 + header_len <= bytes.size(), "checkpoint: corrupt header length in " + path);

  json header;
  try {
    header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + std::ptrdiff_t(header_len));
  } catch (const json::parse_error& e) {
    fail("checkpoint: corrupt JSON header in " + path + ": " + e.what());
  }

  Checkpoint ck;
  ck.config = model_config_from_json(header.at("config"));
  ck.variant = variant_from_name(header.at("variant").get<std::string>());
  ck.epoch = header.at("counters").at("epoch").get<int64_t>();
  ck.step = header.at("counters").at("step").get<int64_t>();
  ck.dropout_rng_state = header.at("rng").at("dropout").get<std::string>();
  if (header.contains("optimizer")) {
    ck.has_optimizer = true;
    ck.optim_cfg = optim_config_from_json(header["optimizer"]);
    ck.lr = header["optimizer"].at("lr").get<double>();
    ck.plateau_best = header["optimizer"].at("plateau_best").get<double>();
    ck.plateau_since = header["optimizer"].at("plateau_since").get<int64_t>();
  }

  const uint8_t* payload = bytes.data() + 16 + header_len;
  const uint64_t payload_len = bytes.size() - 16 - header_len;
  for (const auto& [name, meta] : header.at("tensors").items()) {
    const Shape shape = meta.at("shape").get<Shape>();
    const uint64_t offset = meta.at("offset").get<uint64_t>();
    const uint64_t nbytes = uint64_t(numel_of(shape)) * sizeof(float);
    check(offset + nbytes <= payload_len, "checkpoint: tensor " + name +
                                              " overruns the payload in " + path);
    Tensor<float> t(shape);
    std::memcpy(t.data(), payload + offset, nbytes);
    ck.tensors[name] = t;
  }
  return ck;
}

void Checkpoint::load_into(Model<float>& model) const {
  auto copy_into = [this](const std::string& name, Tensor<float>& dst) {
    auto it = tensors.find(name);
    check(it != tensors.end(), "checkpoint: missing tensor " + name);
    check(it->second.shape() == dst.shape(),
          "checkpoint: shape mismatch for " + name + ": stored " +
              shape_str(it->second.shape()) + ", model expects " + shape_str(dst.shape()));
    std::copy(it->second.data(), it->second.data() + dst.numel(), dst.data());
  };
  for (auto& p : model.params()) copy_into("model." + p.name, p.tensor);
  for (auto& b : model.buffers()) copy_into("model." + b.name, b.tensor);
  model.dropout_rng().deserialize(dropout_rng_state);
}

Model<float> Checkpoint::restore_model() const {
  Model<float> model = Model<float>::build(config, variant, 0);
  load_into(model);
  return model;
}

OptimState Checkpoint::restore_optimizer(std::vector<ParamRef<float>>& params) const {
  check(has_optimizer, "checkpoint: no optimizer state stored");
  OptimState st = OptimState::init(optim_cfg, params);
  st.lr = lr;
  st.plateau_best = plateau_best;
  st.plateau_since = plateau_since;
  for (size_t i = 0; i < params.size(); ++i) {
    auto it = tensors.find("opt.momentum." + params[i].name);
    check(it != tensors.end(), "checkpoint: missing momentum for " + params[i].name);
    check(it->second.shape() == params[i].tensor.shape(),
          "checkpoint: momentum shape mismatch for " + params[i].name);
    std::copy(it->second.data(), it->second.data() + it->second.numel(),
              st.momenta[i].data());
  }
  return st;
}

}  // namespace pagg
