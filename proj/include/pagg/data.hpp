#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pagg/image.hpp"
#include "pagg/tensor.hpp"

namespace pagg {

// --- synthetic script sets ---------------------------------------------------

// Fixed random binary pattern standing in for a character shape.
struct GlyphBitmap {
  int64_t h = 0, w = 0;
  std::vector<uint8_t> bits;  // 0/1

  std::string to_hex() const;
  static GlyphBitmap from_hex(int64_t h, int64_t w, const std::string& hex);
};

// Procedural multi-script alphabet: per script a pool of discriminative
// glyphs plus optional membership in pools of glyphs shared across scripts.
struct ScriptSet {
  struct Script {
    std::string name;
    std::vector<int32_t> own_glyphs;     // discriminative: unique to this script
    std::vector<int32_t> shared_glyphs;  // union of the pools it belongs to
  };

  std::vector<GlyphBitmap> glyphs;
  std::vector<Script> scripts;
  std::vector<std::vector<int64_t>> sharing_graph;  // script id groups that overlap

  int64_t num_scripts() const { return int64_t(scripts.size()); }
  bool has_shared(int64_t script) const { return !scripts[size_t(script)].shared_glyphs.empty(); }

  std::string to_json_string() const;
  static ScriptSet from_json_string(const std::string& text);
  void save(const std::string& path) const;
  static ScriptSet load(const std::string& path);
};

struct DatasetConfig {
  int64_t num_scripts = 4;
  int64_t glyphs_per_script = 50;
  struct Pool {
    std::vector<int64_t> scripts;
    double fraction = 0.8;  // share of each member's inventory drawn from the pool
  };
  std::vector<Pool> shared_pools;
  double line_shared_fraction = 0.8;  // P(slot picks a shared glyph) for pooled scripts
  int64_t line_min = 2, line_max = 5;
  int64_t train_per_script = 500, test_per_script = 200;
  int64_t glyph_h = 24, glyph_w = 16;
  uint64_t seed = 1;

  void validate() const;
  std::string to_json_string() const;
  static DatasetConfig from_json_string(const std::string& text);
  static DatasetConfig load(const std::string& path);
};

ScriptSet build_script_set(const DatasetConfig& cfg);

// --- samples -----------------------------------------------------------------

struct SampleMeta {
  std::vector<int32_t> glyph_ids;
  int64_t disc_count = -1;  // -1: unknown (externally ingested data)
  bool hard = false;        // disc_count <= 1
};

struct Sample {
  Image image;  // raw line, pre-resize
  int64_t label = 0;
  SampleMeta meta;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> label_names;
};

// Horizontal glyph concatenation with random spacing and vertical jitter.
Image render_line(const ScriptSet& set, const std::vector<int32_t>& glyph_ids, Rng& rng);

Sample generate_line(const ScriptSet& set, int64_t script, int64_t length,
                     double shared_fraction, Rng& rng);

struct GeneratedData {
  Dataset train, test;
};

GeneratedData generate_dataset(const ScriptSet& set, const DatasetConfig& cfg);

// Ambiguous line vs the same line with one discriminative glyph appended.
struct FlipPair {
  Image base, extended;
  int64_t script = 0;
};
std::vector<FlipPair> make_flip_pairs(const ScriptSet& set, int64_t n_pairs, int64_t length,
                                      uint64_t seed);

// Writes images/NNNNNN.pgm, manifest.tsv and meta.tsv under dir.
void write_split(const std::string& dir, const Dataset& data);
void write_dataset(const std::string& dir, const DatasetConfig& cfg, const ScriptSet& set,
                   const GeneratedData& data);

// Manifest lines are "relative-path<TAB>label-name". Labels map to contiguous
// ids through the sorted label names. Relisted paths simply oversample.
Dataset ingest_manifest(const std::string& dir, const std::string& manifest_path);

// Reattaches generator metadata (hard split) to an ingested dataset.
void apply_meta(Dataset& data, const std::string& meta_path);

// --- resize, augment, normalize ------------------------------------------------

struct BucketTable {
  struct Rule {
    double upper;          // upper boundary of the aspect-ratio range
    bool upper_inclusive;  // whether the boundary belongs to this bucket
    int64_t ratio;         // target aspect ratio (width = height * ratio)
  };
  std::vector<Rule> rules;
  int64_t height = 32;

  static BucketTable default_table();  // (0,3)->2, [3,6)->4, [6,12]->8, (12,inf)->16
  void validate() const;
  int64_t ratio_for(double aspect_ratio) const;
  int64_t width_for(double aspect_ratio) const { return height * ratio_for(aspect_ratio); }
};

Image group_resize(const Image& img, const BucketTable& table);

struct AugmentConfig {
  bool enabled = true;
  double apply_prob = 0.5;  // each transform applied independently
  double contrast_lo = 0.7, contrast_hi = 1.3;
  double noise_sigma_max = 10.0;  // grayscale units on [0,255]
  double crop_frac = 0.05;        // per side
  double warp_frac = 0.05;        // corner jitter
};

Image augment(const Image& img, const AugmentConfig& cfg, Rng& rng);

// Linear map of intensities to [-1,1]; full_scale is 255 for 8-bit data, 1
// for unit-range data.
inline double normalize_intensity(double v, double full_scale) {
  return v / (full_scale * 0.5) - 1.0;
}

// [channels,H,W] tensor in [-1,1]; grayscale replicated across channels.
Tensor<float> normalize(const Image& img, int64_t channels = 1);

// --- batching ------------------------------------------------------------------

struct Batch {
  Tensor<float> images;  // [N,C,32,W]
  std::vector<int64_t> labels;
  std::vector<int64_t> sample_indices;
  int64_t width = 0;
};

struct PipelineConfig {
  int64_t batch_size = 16;
  int64_t channels = 3;
  BucketTable buckets = BucketTable::default_table();
  AugmentConfig augment;
};

// One epoch of uniform-width batches. Augmentation runs with per-sample rng
// streams derived from (seed, epoch, index), so worker order cannot matter;
// shuffling and batch order derive from (seed, epoch).
std::vector<Batch> make_epoch_batches(const Dataset& data, Mode mode, const PipelineConfig& cfg,
                                      int64_t epoch, uint64_t seed);

}  // namespace pagg
