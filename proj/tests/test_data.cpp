#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <zlib.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "pagg/data.hpp"

namespace fs = std::filesystem;
using namespace pagg;

namespace {

DatasetConfig small_config() {
  DatasetConfig cfg;
  cfg.num_scripts = 4;
  cfg.glyphs_per_script = 20;
  cfg.shared_pools = {{{0, 1}, 0.8}};
  cfg.line_shared_fraction = 0.8;
  cfg.line_min = 2;
  cfg.line_max = 5;
  cfg.train_per_script = 12;
  cfg.test_per_script = 6;
  cfg.seed = 99;
  return cfg;
}

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("pagg_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("bucket table honors the published brackets including boundaries") {
  const BucketTable table = BucketTable::default_table();
  table.validate();

  CHECK(table.ratio_for(3.5) == 4);   // the worked example: 32x128
  CHECK(table.width_for(3.5) == 128);
  CHECK(table.ratio_for(3.0) == 4);   // 3 belongs to [3,6)
  CHECK(table.ratio_for(6.0) == 8);   // 6 belongs to [6,12]
  CHECK(table.ratio_for(12.0) == 8);  // 12 belongs to [6,12]
  CHECK(table.ratio_for(12.0001) == 16);
  CHECK(table.ratio_for(2.9999) == 2);
  CHECK(table.ratio_for(0.01) == 2);
  CHECK(table.ratio_for(1000.0) == 16);
  CHECK_THROWS_AS(table.ratio_for(0.0), Error);

  // total function over random positive ratios
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double r = std::exp(rng.uniform(-4.0, 6.0));
    const int64_t ratio = table.ratio_for(r);
    CHECK((ratio == 2 || ratio == 4 || ratio == 8 || ratio == 16));
  }

  BucketTable bad = table;
  bad.rules[1].ratio = 1;  // ratios must increase
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = table;
  bad.rules.pop_back();  // last range must be unbounded
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("group_resize emits only bucketed sizes at height 32") {
  const BucketTable table = BucketTable::default_table();
  Rng rng(2);
  std::set<int64_t> seen;
  for (int i = 0; i < 100; ++i) {
    const int64_t h = 8 + int64_t(rng.uniform_int(56));
    const int64_t w = 8 + int64_t(rng.uniform_int(900));
    Image img(h, w, uint8_t(rng.uniform_int(256)));
    Image resized = group_resize(img, table);
    CHECK(resized.h == 32);
    CHECK((resized.w == 64 || resized.w == 128 || resized.w == 256 || resized.w == 512));
    seen.insert(resized.w);
  }
  CHECK(seen.size() >= 3);
}

TEST_CASE("script set construction and sharing structure") {
  DatasetConfig cfg = small_config();
  ScriptSet set = build_script_set(cfg);
  CHECK(set.num_scripts() == 4);
  // pooled scripts share identical glyph ids; shared glyphs render identically
  CHECK(set.scripts[0].shared_glyphs == set.scripts[1].shared_glyphs);
  CHECK(set.scripts[2].shared_glyphs.empty());
  CHECK(set.scripts[3].shared_glyphs.empty());
  const int64_t pool = int64_t(std::llround(0.8 * double(cfg.glyphs_per_script)));
  CHECK(int64_t(set.scripts[0].shared_glyphs.size()) == pool);
  CHECK(int64_t(set.scripts[0].own_glyphs.size()) == cfg.glyphs_per_script - pool);
  for (const auto& s : set.scripts) CHECK(!s.own_glyphs.empty());
  CHECK(set.sharing_graph == std::vector<std::vector<int64_t>>{{0, 1}});

  // an oversized pool leaves no discriminative glyphs: construction fails
  DatasetConfig bad = small_config();
  bad.shared_pools[0].fraction = 0.999;
  bad.glyphs_per_script = 3;
  CHECK_THROWS_AS(build_script_set(bad), Error);
}

TEST_CASE("generated lines respect the shared-fraction contract") {
  DatasetConfig cfg = small_config();
  ScriptSet set = build_script_set(cfg);

  // fraction 1 on a pooled script: fully ambiguous lines by construction
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    Sample s = generate_line(set, 0, 4, 1.0, rng);
    CHECK(s.meta.disc_count == 0);
    CHECK(s.meta.hard);
  }
  // fraction 0: every glyph discriminative
  for (int i = 0; i < 20; ++i) {
    Sample s = generate_line(set, 1, 4, 0.0, rng);
    CHECK(s.meta.disc_count == 4);
    CHECK(!s.meta.hard);
  }
  // scripts without shared glyphs are always fully discriminative
  Sample s2 = generate_line(set, 2, 3, 0.9, rng);
  CHECK(s2.meta.disc_count == 3);

  // hard flag: at most one discriminative glyph
  Sample one = generate_line(set, 0, 1, 0.0, rng);
  CHECK(one.meta.disc_count == 1);
  CHECK(one.meta.hard);
}

TEST_CASE("generate_dataset is deterministic and errors on impossible sharing") {
  DatasetConfig cfg = small_config();
  ScriptSet set = build_script_set(cfg);
  GeneratedData a = generate_dataset(set, cfg);
  GeneratedData b = generate_dataset(set, cfg);
  REQUIRE(a.train.samples.size() == b.train.samples.size());
  CHECK(a.train.samples.size() == size_t(4 * cfg.train_per_script));
  CHECK(a.test.samples.size() == size_t(4 * cfg.test_per_script));
  for (size_t i = 0; i < a.train.samples.size(); ++i) {
    CHECK(a.train.samples[i].image == b.train.samples[i].image);
    CHECK(a.train.samples[i].label == b.train.samples[i].label);
  }

  DatasetConfig no_pools = cfg;
  no_pools.shared_pools.clear();
  ScriptSet plain = build_script_set(no_pools);
  CHECK_THROWS_AS(generate_dataset(plain, no_pools), Error);  // fraction > 0, nothing shared
  no_pools.line_shared_fraction = 0.0;
  CHECK_NOTHROW(generate_dataset(plain, no_pools));
}

TEST_CASE("augment identity, clamping and determinism") {
  Rng img_rng(7);
  Image img(32, 80);
  for (auto& px : img.px) px = uint8_t(img_rng.uniform_int(256));

  AugmentConfig off;
  off.enabled = false;
  Rng r1(1);
  CHECK(augment(img, off, r1) == img);

  AugmentConfig on;
  Rng r2(2), r3(2), r4(3);
  Image a = augment(img, on, r2);
  Image b = augment(img, on, r3);
  CHECK(a == b);  // same stream, same output
  Image c = augment(img, on, r4);
  CHECK(a.h == img.h);
  CHECK(a.w == img.w);
  (void)c;

  // probability 1 applies every transform; output stays a valid raster
  AugmentConfig always;
  always.apply_prob = 1.0;
  Rng r5(4);
  Image d = augment(img, always, r5);
  CHECK(d.h == img.h);
  CHECK(d.w == img.w);
}

TEST_CASE("normalize maps intensities onto [-1,1]") {
  CHECK(normalize_intensity(0.0, 255.0) == doctest::Approx(-1.0));
  CHECK(normalize_intensity(255.0, 255.0) == doctest::Approx(1.0));
  CHECK(normalize_intensity(127.5, 255.0) == doctest::Approx(0.0));
  CHECK(normalize_intensity(0.5, 1.0) == doctest::Approx(0.0));
  CHECK(normalize_intensity(1.0, 1.0) == doctest::Approx(1.0));

  Image img(2, 2);
  img.px = {0, 255, 51, 204};
  Tensor<float> t = normalize(img, 3);
  CHECK(t.shape() == Shape{3, 2, 2});
  for (int64_t c = 0; c < 3; ++c) {
    CHECK(t.data()[c * 4 + 0] == doctest::Approx(-1.f));
    CHECK(t.data()[c * 4 + 1] == doctest::Approx(1.f));
    CHECK(t.data()[c * 4 + 2] == doctest::Approx(-0.6f));
    CHECK(t.data()[c * 4 + 3] == doctest::Approx(0.6f));
  }
}

TEST_CASE("epoch batches are uniform width and cover every sample once") {
  DatasetConfig cfg = small_config();
  cfg.line_min = 2;
  cfg.line_max = 9;  // force multiple buckets
  ScriptSet set = build_script_set(cfg);
  GeneratedData data = generate_dataset(set, cfg);

  PipelineConfig pipeline;
  pipeline.batch_size = 8;
  auto batches = make_epoch_batches(data.train, Mode::Train, pipeline, 0, 123);

  std::vector<int64_t> seen(data.train.samples.size(), 0);
  for (const auto& batch : batches) {
    CHECK(batch.images.dim(0) == int64_t(batch.labels.size()));
    CHECK(batch.images.dim(0) >= 2);  // batch-norm contract
    CHECK(batch.images.dim(2) == 32);
    CHECK(batch.images.dim(3) == batch.width);
    for (int64_t idx : batch.sample_indices) seen[size_t(idx)]++;
  }
  for (int64_t count : seen) CHECK(count == 1);

  // determinism: identical (seed, epoch) reproduces the exact batch sequence
  auto again = make_epoch_batches(data.train, Mode::Train, pipeline, 0, 123);
  REQUIRE(again.size() == batches.size());
  for (size_t i = 0; i < batches.size(); ++i) {
    CHECK(again[i].sample_indices == batches[i].sample_indices);
    CHECK(again[i].images.vec() == batches[i].images.vec());
  }
  // a different epoch reshuffles
  auto shuffled = make_epoch_batches(data.train, Mode::Train, pipeline, 1, 123);
  bool any_diff = shuffled.size() != batches.size();
  for (size_t i = 0; !any_diff && i < batches.size(); ++i)
    any_diff = shuffled[i].sample_indices != batches[i].sample_indices;
  CHECK(any_diff);
}

TEST_CASE("a train-mode bucket with a single sample is merged or deferred") {
  DatasetConfig cfg = small_config();
  ScriptSet set = build_script_set(cfg);
  Rng rng(3);

  // two short lines (one bucket) plus one extreme-ratio line alone in its bucket
  Dataset data;
  data.label_names = {"a", "b"};
  Sample s1 = generate_line(set, 0, 2, 0.0, rng);
  Sample s2 = generate_line(set, 1, 2, 0.0, rng);
  Sample wide = generate_line(set, 0, 24, 0.0, rng);  // aspect ratio > 12
  s1.label = 0;
  s2.label = 1;
  wide.label = 0;
  data.samples = {s1, s2, wide};

  PipelineConfig pipeline;
  pipeline.batch_size = 16;
  pipeline.augment.enabled = false;
  auto batches = make_epoch_batches(data, Mode::Train, pipeline, 0, 1);
  // the lone wide sample cannot form a batch-norm-legal batch: deferred
  int64_t covered = 0;
  for (const auto& b : batches) {
    CHECK(b.images.dim(0) >= 2);
    covered += b.images.dim(0);
  }
  CHECK(covered == 2);

  // eval mode keeps it as a singleton batch
  auto eval_batches = make_epoch_batches(data, Mode::Eval, pipeline, 0, 1);
  int64_t eval_covered = 0;
  for (const auto& b : eval_batches) eval_covered += b.images.dim(0);
  CHECK(eval_covered == 3);

  // an odd remainder merges into the previous batch of the same bucket
  Dataset many;
  many.label_names = {"a"};
  for (int i = 0; i < 17; ++i) {
    Sample s = generate_line(set, 0, 2, 0.0, rng);
    s.label = 0;
    many.samples.push_back(s);
  }
  auto merged = make_epoch_batches(many, Mode::Train, pipeline, 0, 2);
  REQUIRE(merged.size() == 1);
  CHECK(merged[0].images.dim(0) == 17);
}

TEST_CASE("manifest ingestion round-trips the generated dataset") {
  DatasetConfig cfg = small_config();
  ScriptSet set = build_script_set(cfg);
  GeneratedData data = generate_dataset(set, cfg);

  const fs::path dir = temp_dir("roundtrip");
  write_dataset(dir.string(), cfg, set, data);

  Dataset loaded = ingest_manifest((dir / "train").string(),
                                   (dir / "train" / "manifest.tsv").string());
  REQUIRE(loaded.samples.size() == data.train.samples.size());
  CHECK(loaded.label_names == data.train.label_names);
  for (size_t i = 0; i < loaded.samples.size(); ++i) {
    CHECK(loaded.samples[i].image == data.train.samples[i].image);
    CHECK(loaded.samples[i].label == data.train.samples[i].label);
    CHECK(loaded.samples[i].meta.disc_count == -1);  // unknown until meta is applied
  }

  apply_meta(loaded, (dir / "train" / "meta.tsv").string());
  for (size_t i = 0; i < loaded.samples.size(); ++i) {
    CHECK(loaded.samples[i].meta.disc_count == data.train.samples[i].meta.disc_count);
    CHECK(loaded.samples[i].meta.hard == data.train.samples[i].meta.hard);
  }

  // the script set snapshot also round-trips
  ScriptSet reloaded = ScriptSet::load((dir / "script_set.json").string());
  REQUIRE(reloaded.glyphs.size() == set.glyphs.size());
  for (size_t i = 0; i < set.glyphs.size(); ++i)
    CHECK(reloaded.glyphs[i].bits == set.glyphs[i].bits);
  fs::remove_all(dir);
}

TEST_CASE("manifest ingestion error paths and oversampling") {
  const fs::path dir = temp_dir("manifest_errors");

  {
    std::ofstream f(dir / "empty.tsv");
  }
  Dataset empty = ingest_manifest(dir.string(), (dir / "empty.tsv").string());
  CHECK(empty.samples.empty());

  {
    std::ofstream f(dir / "bad.tsv");
    f << "missing_tab_line\n";
  }
  CHECK_THROWS_WITH_AS(
      ingest_manifest(dir.string(), (dir / "bad.tsv").string()),
      doctest::Contains("line 1"), Error);

  Image img(8, 16, 128);
  write_pgm((dir / "a.pgm").string(), img);
  {
    std::ofstream f(dir / "dup.tsv");
    f << "a.pgm\tfoo\na.pgm\tfoo\n";  // re-listing oversamples
  }
  Dataset dup = ingest_manifest(dir.string(), (dir / "dup.tsv").string());
  CHECK(dup.samples.size() == 2);

  {
    std::ofstream f(dir / "unknown.tsv");
    f << "a.bmp\tfoo\n";
  }
  CHECK_THROWS_AS(ingest_manifest(dir.string(), (dir / "unknown.tsv").string()), Error);

  {
    std::ofstream f(dir / "missing.tsv");
    f << "nope.pgm\tfoo\n";
  }
  CHECK_THROWS_AS(ingest_manifest(dir.string(), (dir / "missing.tsv").string()), Error);
  fs::remove_all(dir);
}

TEST_CASE("png decoding matches the pixels we encode") {
  // hand-rolled 8-bit grayscale PNG: IHDR + one zlib-deflated IDAT + IEND
  const int64_t h = 5, w = 7;
  Image img(h, w);
  Rng rng(21);
  for (auto& px : img.px) px = uint8_t(rng.uniform_int(256));

  std::vector<uint8_t> raw;
  for (int64_t y = 0; y < h; ++y) {
    raw.push_back(0);  // filter: none
    for (int64_t x = 0; x < w; ++x) raw.push_back(img.at(y, x));
  }
  uLongf comp_len = compressBound(uLong(raw.size()));
  std::vector<uint8_t> comp(comp_len);
  REQUIRE(compress2(comp.data(), &comp_len, raw.data(), uLong(raw.size()), 9) == Z_OK);
  comp.resize(comp_len);

  auto be32 = [](std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v >> 24));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v));
  };
  auto chunk = [&](std::vector<uint8_t>& out, const char* type,
                   const std::vector<uint8_t>& payload) {
    be32(out, uint32_t(payload.size()));
    std::vector<uint8_t> body(type, type + 4);
    body.insert(body.end(), payload.begin(), payload.end());
    out.insert(out.end(), body.begin(), body.end());
    be32(out, uint32_t(crc32(0, body.data(), uInt(body.size()))));
  };

  std::vector<uint8_t> png = {137, 80, 78, 71, 13, 10, 26, 10};
  std::vector<uint8_t> ihdr;
  be32(ihdr, uint32_t(w));
  be32(ihdr, uint32_t(h));
  ihdr.insert(ihdr.end(), {8, 0, 0, 0, 0});  // depth 8, gray, no interlace
  chunk(png, "IHDR", ihdr);
  chunk(png, "IDAT", comp);
  chunk(png, "IEND", {});

  const fs::path dir = temp_dir("png");
  {
    std::ofstream f(dir / "t.png", std::ios::binary);
    f.write(reinterpret_cast<const char*>(png.data()), std::streamsize(png.size()));
  }
  Image decoded = read_image((dir / "t.png").string());
  CHECK(decoded == img);
  fs::remove_all(dir);
}

TEST_CASE("flip pairs share the rendered prefix and append one glyph") {
  DatasetConfig cfg = small_config();
  ScriptSet set = build_script_set(cfg);
  auto pairs = make_flip_pairs(set, 8, 3, 42);
  REQUIRE(pairs.size() == 8);
  for (const auto& pair : pairs) {
    CHECK((pair.script == 0 || pair.script == 1));  // only pooled scripts
    CHECK(pair.extended.w > pair.base.w);
    CHECK(pair.base.h == 32);
    // shared prefix is pixel-identical
    bool same = true;
    for (int64_t y = 0; y < pair.base.h && same; ++y)
      for (int64_t x = 0; x < pair.base.w - 6 && same; ++x)
        same = pair.base.at(y, x) == pair.extended.at(y, x);
    CHECK(same);
  }
  // determinism
  auto again = make_flip_pairs(set, 8, 3, 42);
  for (size_t i = 0; i < pairs.size(); ++i) CHECK(pairs[i].base == again[i].base);
}
