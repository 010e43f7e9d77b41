#include "pagg/data.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace pagg {

// --- glyphs --------------------------------------------------------------------

std::string GlyphBitmap::to_hex() const {
  static const char* digits = "0123456789abcdef";
  std::string out;
  uint8_t nibble = 0;
  int fill = 0;
  for (size_t i = 0; i < bits.size(); ++i) {
    nibble = uint8_t((nibble << 1) | (bits[i] & 1));
    if (++fill == 4) {
      out.push_back(digits[nibble]);
      nibble = 0;
      fill = 0;
    }
  }
  if (fill) out.push_back(digits[nibble << (4 - fill)]);
  return out;
}

GlyphBitmap GlyphBitmap::from_hex(int64_t h, int64_t w, const std::string& hex) {
  GlyphBitmap g;
  g.h = h;
  g.w = w;
  g.bits.assign(size_t(h * w), 0);
  for (size_t i = 0; i < g.bits.size(); ++i) {
    const char c = hex.at(i / 4);
    const int v = c >= 'a' ? c - 'a' + 10 : c - '0';
    g.bits[i] = uint8_t((v >> (3 - int(i % 4))) & 1);
  }
  return g;
}

namespace {

GlyphBitmap random_glyph(int64_t h, int64_t w, Rng& rng) {
  // blocky random pattern: a coarse cell grid upsampled 4x reads as a glyph
  // even after downscaling to line height
  const int64_t cell = 4;
  const int64_t gh = std::max<int64_t>(1, h / cell), gw = std::max<int64_t>(1, w / cell);
  GlyphBitmap g;
  g.h = h;
  g.w = w;
  g.bits.assign(size_t(h * w), 0);
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<uint8_t> cells(size_t(gh * gw));
    int64_t on = 0;
    for (auto& c : cells) {
      c = rng.bernoulli(0.45);
      on += c;
    }
    if (on * 4 < gh * gw || on * 4 > 3 * gh * gw) continue;  // keep fill in [25%,75%]
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        g.bits[size_t(y * w + x)] =
            cells[size_t(std::min(y / cell, gh - 1) * gw + std::min(x / cell, gw - 1))];
    return g;
  }
  fail("random_glyph: could not draw a usable pattern");
}

std::string script_label(int64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "script_%02d", int(i));
  return buf;
}

}  // namespace

// --- script set ------------------------------------------------------------------

void DatasetConfig::validate() const {
  check(num_scripts >= 2, "DatasetConfig: need at least 2 scripts");
  check(glyphs_per_script >= 2, "DatasetConfig: need at least 2 glyphs per script");
  check(line_shared_fraction >= 0.0 && line_shared_fraction <= 1.0,
        "DatasetConfig: line_shared_fraction must be in [0,1]");
  check(line_min >= 1 && line_max >= line_min, "DatasetConfig: bad line length range");
  check(glyph_h >= 4 && glyph_w >= 4, "DatasetConfig: glyphs must be at least 4x4");
  check(glyph_h <= 32, "DatasetConfig: glyph height cannot exceed the line height 32");
  for (const auto& pool : shared_pools) {
    check(pool.scripts.size() >= 2, "DatasetConfig: a shared pool needs >= 2 scripts");
    check(pool.fraction > 0.0 && pool.fraction < 1.0,
          "DatasetConfig: pool fraction must be in (0,1)");
    for (int64_t s : pool.scripts)
      check(s >= 0 && s < num_scripts, "DatasetConfig: pool references unknown script");
  }
}

ScriptSet build_script_set(const DatasetConfig& cfg) {
  cfg.validate();
  ScriptSet set;
  set.scripts.resize(size_t(cfg.num_scripts));
  for (int64_t s = 0; s < cfg.num_scripts; ++s) set.scripts[size_t(s)].name = script_label(s);

  Rng rng = Rng(cfg.seed).child("glyphs");

  std::vector<int64_t> shared_budget(size_t(cfg.num_scripts), 0);
  for (const auto& pool : cfg.shared_pools) {
    const int64_t pool_size = std::max<int64_t>(
        1, int64_t(std::llround(pool.fraction * double(cfg.glyphs_per_script))));
    std::vector<int32_t> ids;
    for (int64_t i = 0; i < pool_size; ++i) {
      ids.push_back(int32_t(set.glyphs.size()));
      set.glyphs.push_back(random_glyph(cfg.glyph_h, cfg.glyph_w, rng));
    }
    std::vector<int64_t> members;
    for (int64_t s : pool.scripts) {
      auto& script = set.scripts[size_t(s)];
      script.shared_glyphs.insert(script.shared_glyphs.end(), ids.begin(), ids.end());
      shared_budget[size_t(s)] += pool_size;
      members.push_back(s);
    }
    set.sharing_graph.push_back(members);
  }

  for (int64_t s = 0; s < cfg.num_scripts; ++s) {
    const int64_t own = cfg.glyphs_per_script - shared_budget[size_t(s)];
    check(own >= 1, "build_script_set: script " + script_label(s) +
                        " has no discriminative glyphs left (shared pools too large)");
    auto& script = set.scripts[size_t(s)];
    for (int64_t i = 0; i < own; ++i) {
      script.own_glyphs.push_back(int32_t(set.glyphs.size()));
      set.glyphs.push_back(random_glyph(cfg.glyph_h, cfg.glyph_w, rng));
    }
  }
  return set;
}

// --- rendering ------------------------------------------------------------------

namespace {

constexpr int64_t kLineHeight = 32;
constexpr uint8_t kInk = 25;
constexpr uint8_t kPaper = 235;

struct SlotLayout {
  int64_t gap_before;  // pixels before this glyph
  int64_t y_offset;
};

std::vector<SlotLayout> draw_layout(int64_t count, int64_t glyph_h, Rng& rng) {
  std::vector<SlotLayout> slots(static_cast<size_t>(count));
  const int64_t slack = kLineHeight - glyph_h;
  for (int64_t i = 0; i < count; ++i) {
    slots[size_t(i)].gap_before = i == 0 ? int64_t(rng.uniform_int(3)) + 3
                                         : int64_t(rng.uniform_int(3)) + 2;
    slots[size_t(i)].y_offset = slack / 2 + int64_t(rng.uniform_int(uint64_t(slack / 2 + 1))) -
                                slack / 4;
  }
  return slots;
}

Image render_slots(const ScriptSet& set, const std::vector<int32_t>& glyph_ids,
                   const std::vector<SlotLayout>& slots, int64_t count, int64_t right_margin) {
  int64_t width = right_margin;
  for (int64_t i = 0; i < count; ++i)
    width += slots[size_t(i)].gap_before + set.glyphs[size_t(glyph_ids[size_t(i)])].w;
  Image img(kLineHeight, width, kPaper);
  int64_t x = 0;
  for (int64_t i = 0; i < count; ++i) {
    const auto& g = set.glyphs[size_t(glyph_ids[size_t(i)])];
    x += slots[size_t(i)].gap_before;
    const int64_t y0 = slots[size_t(i)].y_offset;
    for (int64_t y = 0; y < g.h; ++y)
      for (int64_t gx = 0; gx < g.w; ++gx)
        if (g.bits[size_t(y * g.w + gx)]) img.at(y0 + y, x + gx) = kInk;
    x += g.w;
  }
  return img;
}

}  // namespace

Image render_line(const ScriptSet& set, const std::vector<int32_t>& glyph_ids, Rng& rng) {
  check(!glyph_ids.empty(), "render_line: empty glyph sequence");
  const int64_t glyph_h = set.glyphs[size_t(glyph_ids[0])].h;
  auto slots = draw_layout(int64_t(glyph_ids.size()), glyph_h, rng);
  const int64_t right_margin = int64_t(rng.uniform_int(3)) + 3;
  return render_slots(set, glyph_ids, slots, int64_t(glyph_ids.size()), right_margin);
}

Sample generate_line(const ScriptSet& set, int64_t script, int64_t length,
                     double shared_fraction, Rng& rng) {
  const auto& sc = set.scripts[size_t(script)];
  Sample sample;
  sample.label = script;
  for (int64_t i = 0; i < length; ++i) {
    const bool pick_shared =
        !sc.shared_glyphs.empty() && shared_fraction > 0.0 && rng.bernoulli(shared_fraction);
    if (pick_shared) {
      sample.meta.glyph_ids.push_back(
          sc.shared_glyphs[size_t(rng.uniform_int(sc.shared_glyphs.size()))]);
    } else {
      sample.meta.glyph_ids.push_back(
          sc.own_glyphs[size_t(rng.uniform_int(sc.own_glyphs.size()))]);
    }
  }
  int64_t disc = 0;
  for (int32_t id : sample.meta.glyph_ids) {
    if (std::find(sc.own_glyphs.begin(), sc.own_glyphs.end(), id) != sc.own_glyphs.end()) ++disc;
  }
  sample.meta.disc_count = disc;
  sample.meta.hard = disc <= 1;
  sample.image = render_line(set, sample.meta.glyph_ids, rng);
  return sample;
}

GeneratedData generate_dataset(const ScriptSet& set, const DatasetConfig& cfg) {
  cfg.validate();
  if (cfg.line_shared_fraction > 0.0) {
    bool any_shared = false;
    for (const auto& s : set.scripts) any_shared |= !s.shared_glyphs.empty();
    check(any_shared,
          "generate_dataset: shared fraction requested but no script has shared glyphs");
  }

  GeneratedData out;
  for (const auto& s : set.scripts) {
    out.train.label_names.push_back(s.name);
    out.test.label_names.push_back(s.name);
  }

  auto fill_split = [&](Dataset& split, int64_t per_script, const char* tag) {
    split.samples.resize(size_t(per_script * set.num_scripts()));
#pragma omp parallel for collapse(2) schedule(static) num_threads(data_workers())
    for (int64_t s = 0; s < set.num_scripts(); ++s) {
      for (int64_t i = 0; i < per_script; ++i) {
        Rng rng = Rng(cfg.seed).child(tag).child(uint64_t(s)).child(uint64_t(i));
        const int64_t len =
            cfg.line_min + int64_t(rng.uniform_int(uint64_t(cfg.line_max - cfg.line_min + 1)));
        split.samples[size_t(s * per_script + i)] =
            generate_line(set, s, len, cfg.line_shared_fraction, rng);
      }
    }
  };
  fill_split(out.train, cfg.train_per_script, "train");
  fill_split(out.test, cfg.test_per_script, "test");
  return out;
}

std::vector<FlipPair> make_flip_pairs(const ScriptSet& set, int64_t n_pairs, int64_t length,
                                      uint64_t seed) {
  std::vector<int64_t> pooled;
  for (int64_t s = 0; s < set.num_scripts(); ++s)
    if (set.has_shared(s)) pooled.push_back(s);
  check(!pooled.empty(), "make_flip_pairs: no script has shared glyphs");

  std::vector<FlipPair> pairs;
  for (int64_t i = 0; i < n_pairs; ++i) {
    Rng rng = Rng(seed).child("flip").child(uint64_t(i));
    const int64_t script = pooled[size_t(rng.uniform_int(pooled.size()))];
    const auto& sc = set.scripts[size_t(script)];
    std::vector<int32_t> ids;
    for (int64_t j = 0; j < length; ++j)
      ids.push_back(sc.shared_glyphs[size_t(rng.uniform_int(sc.shared_glyphs.size()))]);
    ids.push_back(sc.own_glyphs[size_t(rng.uniform_int(sc.own_glyphs.size()))]);

    // one layout for both renders so the shared prefix is pixel-identical
    const int64_t glyph_h = set.glyphs[size_t(ids[0])].h;
    auto slots = draw_layout(length + 1, glyph_h, rng);
    const int64_t right_margin = int64_t(rng.uniform_int(3)) + 3;
    FlipPair pair;
    pair.script = script;
    pair.base = render_slots(set, ids, slots, length, right_margin);
    pair.extended = render_slots(set, ids, slots, length + 1, right_margin);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

// --- json serialization -----------------------------------------------------------

std::string ScriptSet::to_json_string() const {
  json j;
  j["glyph_h"] = glyphs.empty() ? 0 : glyphs[0].h;
  j["glyph_w"] = glyphs.empty() ? 0 : glyphs[0].w;
  j["glyphs"] = json::array();
  for (const auto& g : glyphs) j["glyphs"].push_back(g.to_hex());
  j["scripts"] = json::array();
  for (const auto& s : scripts) {
    json js;
    js["name"] = s.name;
    js["own"] = s.own_glyphs;
    js["shared"] = s.shared_glyphs;
    j["scripts"].push_back(js);
  }
  j["sharing_graph"] = sharing_graph;
  return j.dump(2);
}

ScriptSet ScriptSet::from_json_string(const std::string& text) {
  json j = json::parse(text);
  ScriptSet set;
  const int64_t h = j.at("glyph_h").get<int64_t>();
  const int64_t w = j.at("glyph_w").get<int64_t>();
  for (const auto& hex : j.at("glyphs"))
    set.glyphs.push_back(GlyphBitmap::from_hex(h, w, hex.get<std::string>()));
  for (const auto& js : j.at("scripts")) {
    ScriptSet::Script s;
    s.name = js.at("name").get<std::string>();
    s.own_glyphs = js.at("own").get<std::vector<int32_t>>();
    s.shared_glyphs = js.at("shared").get<std::vector<int32_t>>();
    set.scripts.push_back(std::move(s));
  }
  set.sharing_graph = j.at("sharing_graph").get<std::vector<std::vector<int64_t>>>();
  return set;
}

void ScriptSet::save(const std::string& path) const {
  std::ofstream f(path);
  check(f.good(), "ScriptSet::save: cannot open " + path);
  f << to_json_string() << "\n";
}

ScriptSet ScriptSet::load(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), "ScriptSet::load: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_json_string(ss.str());
}

std::string DatasetConfig::to_json_string() const {
  json j;
  j["num_scripts"] = num_scripts;
  j["glyphs_per_script"] = glyphs_per_script;
  j["shared_pools"] = json::array();
  for (const auto& pool : shared_pools) {
    json jp;
    jp["scripts"] = pool.scripts;
    jp["fraction"] = pool.fraction;
    j["shared_pools"].push_back(jp);
  }
  j["line_shared_fraction"] = line_shared_fraction;
  j["line_min"] = line_min;
  j["line_max"] = line_max;
  j["train_per_script"] = train_per_script;
  j["test_per_script"] = test_per_script;
  j["glyph_h"] = glyph_h;
  j["glyph_w"] = glyph_w;
  j["seed"] = seed;
  return j.dump(2);
}

DatasetConfig DatasetConfig::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(std::string("dataset config: invalid JSON: ") + e.what());
  }
  DatasetConfig cfg;
  if (j.contains("num_scripts")) cfg.num_scripts = j["num_scripts"].get<int64_t>();
  if (j.contains("glyphs_per_script"))
    cfg.glyphs_per_script = j["glyphs_per_script"].get<int64_t>();
  if (j.contains("shared_pools")) {
    for (const auto& jp : j["shared_pools"]) {
      DatasetConfig::Pool pool;
      pool.scripts = jp.at("scripts").get<std::vector<int64_t>>();
      if (jp.contains("fraction")) pool.fraction = jp["fraction"].get<double>();
      cfg.shared_pools.push_back(std::move(pool));
    }
  }
  if (j.contains("line_shared_fraction"))
    cfg.line_shared_fraction = j["line_shared_fraction"].get<double>();
  if (j.contains("line_min")) cfg.line_min = j["line_min"].get<int64_t>();
  if (j.contains("line_max")) cfg.line_max = j["line_max"].get<int64_t>();
  if (j.contains("train_per_script")) cfg.train_per_script = j["train_per_script"].get<int64_t>();
  if (j.contains("test_per_script")) cfg.test_per_script = j["test_per_script"].get<int64_t>();
  if (j.contains("glyph_h")) cfg.glyph_h = j["glyph_h"].get<int64_t>();
  if (j.contains("glyph_w")) cfg.glyph_w = j["glyph_w"].get<int64_t>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
  cfg.validate();
  return cfg;
}

DatasetConfig DatasetConfig::load(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), "DatasetConfig::load: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_json_string(ss.str());
}

// --- on-disk format ----------------------------------------------------------------

void write_split(const std::string& dir, const Dataset& data) {
  fs::create_directories(fs::path(dir) / "images");
  std::ofstream manifest(fs::path(dir) / "manifest.tsv");
  std::ofstream meta(fs::path(dir) / "meta.tsv");
  check(manifest.good() && meta.good(), "write_split: cannot create files under " + dir);
  for (size_t i = 0; i < data.samples.size(); ++i) {
    const auto& s = data.samples[i];
    char name[64];
    std::snprintf(name, sizeof(name), "images/%06zu.pgm", i);
    write_pgm((fs::path(dir) / name).string(), s.image);
    manifest << name << "\t" << data.label_names[size_t(s.label)] << "\n";
    meta << name << "\t" << data.label_names[size_t(s.label)] << "\t";
    for (size_t g = 0; g < s.meta.glyph_ids.size(); ++g)
      meta << (g ? "," : "") << s.meta.glyph_ids[g];
    meta << "\t" << s.meta.disc_count << "\t" << (s.meta.hard ? 1 : 0) << "\n";
  }
}

void write_dataset(const std::string& dir, const DatasetConfig& cfg, const ScriptSet& set,
                   const GeneratedData& data) {
  fs::create_directories(dir);
  {
    std::ofstream f(fs::path(dir) / "dataset_config.json");
    check(f.good(), "write_dataset: cannot write config");
    f << cfg.to_json_string() << "\n";
  }
  set.save((fs::path(dir) / "script_set.json").string());
  write_split((fs::path(dir) / "train").string(), data.train);
  write_split((fs::path(dir) / "test").string(), data.test);
}

Dataset ingest_manifest(const std::string& dir, const std::string& manifest_path) {
  std::ifstream f(manifest_path);
  check(f.good(), "ingest_manifest: cannot open " + manifest_path);

  struct Row {
    std::string path, label;
  };
  std::vector<Row> rows;
  std::set<std::string> names;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    check(tab != std::string::npos && tab > 0 && tab + 1 < line.size(),
          "ingest_manifest: line " + std::to_string(line_no) +
              ": expected \"path<TAB>label\", got \"" + line + "\"");
    Row row{line.substr(0, tab), line.substr(tab + 1)};
    names.insert(row.label);
    rows.push_back(std::move(row));
  }

  Dataset data;
  data.label_names.assign(names.begin(), names.end());  // std::set is sorted
  std::map<std::string, int64_t> label_id;
  for (size_t i = 0; i < data.label_names.size(); ++i)
    label_id[data.label_names[i]] = int64_t(i);

  for (size_t i = 0; i < rows.size(); ++i) {
    Sample s;
    s.label = label_id[rows[i].label];
    try {
      s.image = read_image((fs::path(dir) / rows[i].path).string());
    } catch (const Error& e) {
      fail("ingest_manifest: line " + std::to_string(i + 1) + ": " + e.what());
    }
    data.samples.push_back(std::move(s));
  }
  return data;
}

void apply_meta(Dataset& data, const std::string& meta_path) {
  std::ifstream f(meta_path);
  check(f.good(), "apply_meta: cannot open " + meta_path);
  std::map<std::string, SampleMeta> by_path;
  std::string line;
  int64_t line_no = 0;
  std::vector<std::string> order;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string path, label, ids, disc, hard;
    std::getline(is, path, '\t');
    std::getline(is, label, '\t');
    std::getline(is, ids, '\t');
    std::getline(is, disc, '\t');
    std::getline(is, hard, '\t');
    check(!path.empty() && !disc.empty() && !hard.empty(),
          "apply_meta: line " + std::to_string(line_no) + ": malformed row");
    SampleMeta meta;
    std::istringstream ids_in(ids);
    std::string id;
    while (std::getline(ids_in, id, ','))
      if (!id.empty()) meta.glyph_ids.push_back(int32_t(std::stol(id)));
    meta.disc_count = std::stol(disc);
    meta.hard = hard == "1";
    by_path[path] = std::move(meta);
    order.push_back(path);
  }
  check(order.size() == data.samples.size(),
        "apply_meta: row count does not match dataset size");
  for (size_t i = 0; i < data.samples.size(); ++i) data.samples[i].meta = by_path[order[i]];
}

// --- resize / augment / normalize ---------------------------------------------------

BucketTable BucketTable::default_table() {
  BucketTable t;
  t.rules = {{3.0, false, 2}, {6.0, false, 4}, {12.0, true, 8},
             {std::numeric_limits<double>::infinity(), false, 16}};
  t.height = 32;
  return t;
}

void BucketTable::validate() const {
  check(!rules.empty(), "BucketTable: empty");
  check(height >= 1, "BucketTable: bad height");
  for (size_t i = 0; i < rules.size(); ++i) {
    check(rules[i].ratio >= 1, "BucketTable: ratios must be >= 1");
    if (i > 0) {
      check(rules[i].upper > rules[i - 1].upper, "BucketTable: boundaries must increase");
      check(rules[i].ratio > rules[i - 1].ratio, "BucketTable: ratios must increase");
    }
  }
  check(std::isinf(rules.back().upper), "BucketTable: last range must be unbounded");
}

int64_t BucketTable::ratio_for(double aspect_ratio) const {
  check(aspect_ratio > 0.0, "BucketTable: aspect ratio must be positive");
  for (const auto& rule : rules)
    if (aspect_ratio < rule.upper || (rule.upper_inclusive && aspect_ratio == rule.upper))
      return rule.ratio;
  return rules.back().ratio;  // unreachable when the table is valid
}

Image group_resize(const Image& img, const BucketTable& table) {
  check(img.h >= 1 && img.w >= 1, "group_resize: empty image");
  const int64_t ratio = table.ratio_for(img.aspect_ratio());
  return bilinear_resize(img, table.height, table.height * ratio);
}

namespace {

Image adjust_contrast(const Image& img, double factor) {
  double mean = 0;
  for (uint8_t v : img.px) mean += v;
  mean /= double(img.px.size());
  Image out(img.h, img.w);
  for (size_t i = 0; i < img.px.size(); ++i) {
    const double v = mean + (double(img.px[i]) - mean) * factor;
    out.px[i] = uint8_t(std::lround(std::min(255.0, std::max(0.0, v))));
  }
  return out;
}

Image add_noise(const Image& img, double sigma, Rng& rng) {
  Image out(img.h, img.w);
  for (size_t i = 0; i < img.px.size(); ++i) {
    const double v = double(img.px[i]) + rng.normal() * sigma;
    out.px[i] = uint8_t(std::lround(std::min(255.0, std::max(0.0, v))));
  }
  return out;
}

Image random_crop_resize(const Image& img, double frac, Rng& rng) {
  const int64_t dx0 = int64_t(rng.uniform(0.0, frac) * double(img.w));
  const int64_t dx1 = int64_t(rng.uniform(0.0, frac) * double(img.w));
  const int64_t dy0 = int64_t(rng.uniform(0.0, frac) * double(img.h));
  const int64_t dy1 = int64_t(rng.uniform(0.0, frac) * double(img.h));
  const int64_t h = img.h - dy0 - dy1, w = img.w - dx0 - dx1;
  if (h < 4 || w < 4) return img;
  Image crop(h, w);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) crop.at(y, x) = img.at(y + dy0, x + dx0);
  return bilinear_resize(crop, img.h, img.w);
}

Image random_warp(const Image& img, double frac, Rng& rng) {
  const double jx = frac * double(img.w), jy = frac * double(img.h);
  std::array<std::array<double, 2>, 4> dst = {{{0, 0},
                                               {double(img.w - 1), 0},
                                               {double(img.w - 1), double(img.h - 1)},
                                               {0, double(img.h - 1)}}};
  std::array<std::array<double, 2>, 4> src = dst;
  for (auto& corner : src) {
    corner[0] += rng.uniform(-jx, jx);
    corner[1] += rng.uniform(-jy, jy);
  }
  // inverse map: destination corners -> jittered source corners
  return warp_perspective(img, homography_from_corners(dst, src));
}

}  // namespace

Image augment(const Image& img, const AugmentConfig& cfg, Rng& rng) {
  if (!cfg.enabled) return img;
  Image out = img;
  if (rng.bernoulli(cfg.apply_prob))
    out = adjust_contrast(out, rng.uniform(cfg.contrast_lo, cfg.contrast_hi));
  if (rng.bernoulli(cfg.apply_prob))
    out = add_noise(out, rng.uniform(0.0, cfg.noise_sigma_max), rng);
  if (rng.bernoulli(cfg.apply_prob)) out = random_crop_resize(out, cfg.crop_frac, rng);
  if (rng.bernoulli(cfg.apply_prob)) out = random_warp(out, cfg.warp_frac, rng);
  return out;
}

Tensor<float> normalize(const Image& img, int64_t channels) {
  Tensor<float> t(Shape{channels, img.h, img.w});
  const int64_t hw = img.h * img.w;
  for (int64_t i = 0; i < hw; ++i) {
    const float v = float(normalize_intensity(double(img.px[size_t(i)]), 255.0));
    for (int64_t c = 0; c < channels; ++c) t.data()[c * hw + i] = v;
  }
  return t;
}

// --- batching -----------------------------------------------------------------------

std::vector<Batch> make_epoch_batches(const Dataset& data, Mode mode, const PipelineConfig& cfg,
                                      int64_t epoch, uint64_t seed) {
  check(cfg.batch_size >= 2, "make_epoch_batches: batch size must be >= 2");
  cfg.buckets.validate();
  const int64_t n = int64_t(data.samples.size());

  // resize (and augment, in train mode) with order-independent rng streams
  std::vector<Image> prepared(static_cast<size_t>(n));
#pragma omp parallel for schedule(dynamic, 16) num_threads(data_workers())
  for (int64_t i = 0; i < n; ++i) {
    const Image& raw = data.samples[size_t(i)].image;
    if (mode == Mode::Train) {
      Rng rng = Rng(seed).child("aug").child(uint64_t(epoch)).child(uint64_t(i));
      prepared[size_t(i)] = group_resize(augment(raw, cfg.augment, rng), cfg.buckets);
    } else {
      prepared[size_t(i)] = group_resize(raw, cfg.buckets);
    }
  }

  std::map<int64_t, std::vector<int64_t>> by_width;
  for (int64_t i = 0; i < n; ++i) by_width[prepared[size_t(i)].w].push_back(i);

  struct Chunk {
    int64_t width;
    std::vector<int64_t> idx;
  };
  std::vector<Chunk> chunks;
  int64_t bucket_no = 0;
  for (auto& [width, idx] : by_width) {
    if (mode == Mode::Train) {
      Rng rng = Rng(seed).child("shuffle").child(uint64_t(epoch)).child(uint64_t(bucket_no));
      for (size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[size_t(rng.uniform_int(i))]);
    }
    ++bucket_no;
    size_t first_chunk = chunks.size();
    for (size_t start = 0; start < idx.size(); start += size_t(cfg.batch_size)) {
      Chunk c;
      c.width = width;
      const size_t end = std::min(idx.size(), start + size_t(cfg.batch_size));
      c.idx.assign(idx.begin() + std::ptrdiff_t(start), idx.begin() + std::ptrdiff_t(end));
      chunks.push_back(std::move(c));
    }
    // batch-norm needs >= 2 samples in train mode
    if (mode == Mode::Train && chunks.back().idx.size() == 1) {
      if (chunks.size() - 1 > first_chunk) {
        chunks[chunks.size() - 2].idx.push_back(chunks.back().idx[0]);
        chunks.pop_back();
      } else {
        std::fprintf(stderr,
                     "[pagg] warning: bucket width %lld has a single sample; deferring it "
                     "this epoch\n",
                     (long long)width);
        chunks.pop_back();
      }
    }
  }

  if (mode == Mode::Train) {
    Rng rng = Rng(seed).child("order").child(uint64_t(epoch));
    for (size_t i = chunks.size(); i > 1; --i)
      std::swap(chunks[i - 1], chunks[size_t(rng.uniform_int(i))]);
  }

  std::vector<Batch> batches;
  for (const auto& c : chunks) {
    Batch b;
    b.width = c.width;
    const int64_t bs = int64_t(c.idx.size());
    b.images = Tensor<float>(Shape{bs, cfg.channels, cfg.buckets.height, c.width});
    const int64_t chw = cfg.channels * cfg.buckets.height * c.width;
    for (int64_t row = 0; row < bs; ++row) {
      const Image& img = prepared[size_t(c.idx[size_t(row)])];
      Tensor<float> t = normalize(img, cfg.channels);
      std::copy(t.data(), t.data() + chw, b.images.data() + row * chw);
      b.labels.push_back(data.samples[size_t(c.idx[size_t(row)])].label);
      b.sample_indices.push_back(c.idx[size_t(row)]);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace pagg
