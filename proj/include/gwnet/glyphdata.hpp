#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gwnet/tensor.hpp"

namespace gwnet {

/// One grayscale glyph, values in [-1, 1] (paper white = +1).
struct GlyphImage {
  int size = 64;
  int style_id = 0;
  int content_id = 0;
  std::vector<double> pixels;  // size*size, row-major

  Tensor tensor() const;  // 1x1xSxS
};

double pixel_from_byte(std::uint8_t p);
std::uint8_t byte_from_pixel(double v);

struct PackManifest {
  int version = 1;
  int I = 0;  // target styles are 1..I
  int J = 0;  // contents are 1..J
  int size = 64;
  std::vector<int> prototype_styles;
  std::vector<int> holdout_styles;
  std::vector<std::string> charset;  // optional labels, one per content
};

/// Parses manifest JSON. Errors name the offending field.
PackManifest parse_manifest(const std::string& json_text);
std::string manifest_to_json(const PackManifest& m);

/// Sparse (style, content) -> glyph index. Immutable once built.
class GlyphPack {
 public:
  GlyphPack() = default;
  explicit GlyphPack(PackManifest manifest);

  const PackManifest& manifest() const { return manifest_; }
  int M() const { return static_cast<int>(manifest_.prototype_styles.size()); }
  int size() const { return manifest_.size; }

  void add(GlyphImage image);
  bool has(int style, int content) const;
  const GlyphImage& at(int style, int content) const;
  std::vector<int> contents_of(int style) const;
  std::size_t image_count() const { return images_.size(); }

  /// Styles in 1..I that are not held out.
  std::vector<int> training_styles() const;
  /// Every style id that has at least one image, ascending.
  std::vector<int> all_styles() const;

  /// Checks manifest consistency: prototype styles outside 1..I and
  /// non-empty, holdouts disjoint from prototypes.
  void validate() const;

  const std::map<std::pair<int, int>, GlyphImage>& images() const { return images_; }

 private:
  PackManifest manifest_;
  std::map<std::pair<int, int>, GlyphImage> images_;
};

GlyphImage load_glyph(const std::filesystem::path& png, int style, int content,
                      int expected_size);
void save_glyph(const std::filesystem::path& png, const GlyphImage& g);

/// Reads `<style_id>/<content_id>.png` below `dir` for every style named in
/// the manifest. Missing files are skipped; statistics go to std::clog.
GlyphPack import_directory(const std::filesystem::path& dir,
                           const std::filesystem::path& manifest_path);
/// Convenience: manifest.json inside `dir`.
GlyphPack load_pack(const std::filesystem::path& dir);
void export_pack(const GlyphPack& pack, const std::filesystem::path& dir);

/// Row-major grid of glyphs with a 1px gutter of paper white. Rows may be
/// ragged; missing cells stay white.
void write_sheet(const std::filesystem::path& png,
                 const std::vector<std::vector<Tensor>>& rows);

struct TrainSample {
  const GlyphImage* target = nullptr;
  std::vector<const GlyphImage*> prototypes;  // M, content j
  std::vector<const GlyphImage*> references;  // N, style i, contents != j
  int m_pick = 0;  // 0-based m' in [0, M)
  int n_pick = 0;  // 0-based n' in [0, N)
};

/// Seeded sampler over training targets (i, j). Owns its RNG so one
/// instance per training thread gives reproducible batches.
class Sampler {
 public:
  Sampler(const GlyphPack& pack, int N, std::uint64_t seed);

  std::vector<TrainSample> next(int batch);
  /// Eligible (style, content) targets, in a fixed order.
  const std::vector<std::pair<int, int>>& targets() const { return targets_; }
  const std::vector<int>& excluded_styles() const { return excluded_; }

  std::string rng_state() const;
  void set_rng_state(const std::string& state);

 private:
  const GlyphPack* pack_;
  int N_;
  std::mt19937_64 rng_;
  std::vector<std::pair<int, int>> targets_;
  std::map<int, std::vector<int>> contents_;
  std::vector<int> excluded_;
};

std::vector<TrainSample> sample_batch(const GlyphPack& pack, int batch, int N,
                                      std::uint64_t seed);

struct InferenceInput {
  int content_id = 0;
  std::vector<const GlyphImage*> prototypes;
  std::vector<const GlyphImage*> references;
};

struct InferenceInputs {
  std::vector<InferenceInput> items;
  std::vector<int> skipped;  // contents without full prototype coverage
};

InferenceInputs build_inference_inputs(const GlyphPack& pack,
                                       const std::vector<int>& content_ids,
                                       const std::vector<const GlyphImage*>& style_refs);

/// Stacks glyph tensors along N.
Tensor stack_glyphs(const std::vector<const GlyphImage*>& glyphs);

}  // namespace gwnet
