#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gwnet/glyphdata.hpp"
#include "gwnet/percepnets.hpp"
#include "gwnet/wnet.hpp"

namespace gwnet {

/// Inference-mode generation of the requested contents in the style of
/// `refs`. Returns one (1,1,S,S) glyph per content that all prototype fonts
/// cover; skipped contents are listed in `skipped` when given.
std::vector<Tensor> synthesize(Generator& G, const GlyphPack& pack, const std::vector<int>& contents,
                               const std::vector<const GlyphImage*>& refs,
                               std::vector<int>* skipped = nullptr);

/// Grid PNG, one row per generated glyph.
void write_synth_sheet(const std::filesystem::path& png, const std::vector<Tensor>& glyphs);

struct EvalOptions {
  int heldout_refs = 1;   // references per held-out style
  int seen_refs = 4;      // references per seen-style reconstruction
  std::uint64_t seed = 1;
  // Score the pack's own glyphs in place of generations.
  bool ground_truth = false;
};

struct EvalReport {
  double heldout_content_accuracy = -1;  // -1 when the pack holds no such style
  double heldout_pixel_l1 = -1;          // against the held-out ground truth
  int heldout_generated = 0;
  std::map<int, double> heldout_per_style;
  double seen_content_accuracy = 0;
  double seen_style_accuracy = -1;
  double seen_pixel_l1 = 0;
  int seen_generated = 0;

  std::string to_text() const;
};

/// Held-out styles: every content from `heldout_refs` reference(s), scored
/// by phi_content. Seen styles: every training target rebuilt from
/// `seen_refs` other contents of its style, scored by both classifiers and
/// pixel L1. phi_style may be null.
EvalReport evaluate(Generator& G, const GlyphPack& pack, const Classifier& phi_content,
                    const Classifier* phi_style, const EvalOptions& opt = {});

}  // namespace gwnet
