#include "gwnet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "gwnet/ops.hpp"

namespace gwnet {

namespace {

constexpr int kChunk = 16;

Tensor prototypes_of(const std::vector<const GlyphImage*>& protos) {
  Tensor p = stack_glyphs(protos);
  const Shape& s = p.shape();
  return reshape(p, Shape{1, s.n, s.h, s.w});
}

struct Job {
  std::vector<const GlyphImage*> prototypes;
  std::vector<const GlyphImage*> references;
  const GlyphImage* truth = nullptr;
};

// All jobs in one call must share the reference count.
Tensor run_jobs(Generator& G, const std::vector<Job>& jobs) {
  NoGradGuard no_grad;
  std::vector<Tensor> out;
  for (std::size_t start = 0; start < jobs.size(); start += kChunk) {
    const std::size_t end = std::min(jobs.size(), start + kChunk);
    std::vector<Tensor> protos, refs;
    for (std::size_t k = start; k < end; ++k) {
      protos.push_back(prototypes_of(jobs[k].prototypes));
      refs.push_back(stack_glyphs(jobs[k].references));
    }
    const int L = static_cast<int>(jobs[start].references.size());
    out.push_back(G.generate(concat(std::span<const Tensor>(protos), 0),
                             concat(std::span<const Tensor>(refs), 0), L, false));
  }
  return concat(std::span<const Tensor>(out), 0);
}

Tensor truths(const std::vector<Job>& jobs) {
  std::vector<const GlyphImage*> g;
  for (const Job& j : jobs) g.push_back(j.truth);
  return stack_glyphs(g);
}

std::vector<const GlyphImage*> prototype_set(const GlyphPack& pack, int content) {
  std::vector<const GlyphImage*> p;
  for (int c : pack.manifest().prototype_styles) {
    if (!pack.has(c, content)) return {};
    p.push_back(&pack.at(c, content));
  }
  return p;
}

std::vector<const GlyphImage*> draw_refs(const GlyphPack& pack, int style, int exclude, int count,
                                         std::mt19937_64& rng) {
  std::vector<int> pool;
  for (int c : pack.contents_of(style))
    if (c != exclude) pool.push_back(c);
  if (static_cast<int>(pool.size()) < count) {
    throw DataError("style " + std::to_string(style) + " has too few glyphs for " + std::to_string(count) +
                    " reference(s)");
  }
  // Partial Fisher-Yates with explicit draws keeps the stream portable.
  for (int k = 0; k < count; ++k) {
    const int span = static_cast<int>(pool.size()) - k;
    const int pick = k + static_cast<int>(rng() % static_cast<std::uint64_t>(span));
    std::swap(pool[k], pool[pick]);
  }
  std::vector<const GlyphImage*> refs;
  for (int k = 0; k < count; ++k) refs.push_back(&pack.at(style, pool[k]));
  return refs;
}

}  // namespace

std::vector<Tensor> synthesize(Generator& G, const GlyphPack& pack, const std::vector<int>& contents,
                               const std::vector<const GlyphImage*>& refs, std::vector<int>* skipped) {
  InferenceInputs in = build_inference_inputs(pack, contents, refs);
  if (skipped) *skipped = in.skipped;
  std::vector<Job> jobs;
  for (const InferenceInput& item : in.items) jobs.push_back({item.prototypes, item.references, nullptr});
  std::vector<Tensor> glyphs;
  if (jobs.empty()) return glyphs;
  Tensor all = run_jobs(G, jobs);
  for (int k = 0; k < all.shape().n; ++k) glyphs.push_back(narrow(all, 0, k, 1));
  return glyphs;
}

void write_synth_sheet(const std::filesystem::path& png, const std::vector<Tensor>& glyphs) {
  std::vector<std::vector<Tensor>> rows;
  for (const Tensor& g : glyphs) rows.push_back({g});
  write_sheet(png, rows);
}

EvalReport evaluate(Generator& G, const GlyphPack& pack, const Classifier& phi_content,
                    const Classifier* phi_style, const EvalOptions& opt) {
  const PackManifest& m = pack.manifest();
  if (phi_content.config().J != m.J) throw DataError("phi_content was trained for a different content count");
  if (opt.heldout_refs < 1 || opt.seen_refs < 1) throw std::invalid_argument("eval: reference counts must be >= 1");
  std::mt19937_64 rng(opt.seed);
  EvalReport rep;

  auto images_for = [&](const std::vector<Job>& jobs) { return opt.ground_truth ? truths(jobs) : run_jobs(G, jobs); };

  // Held-out styles.
  std::vector<Tensor> held_images, held_truth;
  std::vector<int> held_labels;
  for (int h : m.holdout_styles) {
    std::vector<const GlyphImage*> refs = draw_refs(pack, h, 0, opt.heldout_refs, rng);
    std::vector<Job> jobs, scored;
    std::vector<int> labels;
    for (int j = 1; j <= m.J; ++j) {
      std::vector<const GlyphImage*> protos = prototype_set(pack, j);
      if (protos.empty()) continue;
      const GlyphImage* truth = pack.has(h, j) ? &pack.at(h, j) : nullptr;
      if (opt.ground_truth && !truth) continue;
      jobs.push_back({protos, refs, truth});
      labels.push_back(j - 1);
    }
    if (jobs.empty()) continue;
    Tensor images = images_for(jobs);
    rep.heldout_per_style[h] = classifier_accuracy(phi_content, images, labels, true);
    held_images.push_back(images);
    held_labels.insert(held_labels.end(), labels.begin(), labels.end());
    for (std::size_t k = 0; k < jobs.size(); ++k) {
      if (!jobs[k].truth) continue;
      NoGradGuard no_grad;
      held_truth.push_back(abs(sub(narrow(images, 0, static_cast<int>(k), 1), jobs[k].truth->tensor())));
    }
  }
  if (!held_images.empty()) {
    Tensor images = concat(std::span<const Tensor>(held_images), 0);
    rep.heldout_generated = images.shape().n;
    rep.heldout_content_accuracy = classifier_accuracy(phi_content, images, held_labels, true);
  }
  if (!held_truth.empty()) {
    NoGradGuard no_grad;
    rep.heldout_pixel_l1 = mean(concat(std::span<const Tensor>(held_truth), 0), kAll).item();
  }

  // Seen-style reconstructions of every training target.
  std::vector<Job> jobs;
  std::vector<int> content_labels, style_labels;
  for (int i : pack.training_styles()) {
    for (int j : pack.contents_of(i)) {
      std::vector<const GlyphImage*> protos = prototype_set(pack, j);
      if (protos.empty()) continue;
      if (static_cast<int>(pack.contents_of(i).size()) - 1 < opt.seen_refs) continue;
      jobs.push_back({protos, draw_refs(pack, i, j, opt.seen_refs, rng), &pack.at(i, j)});
      content_labels.push_back(j - 1);
      style_labels.push_back(i - 1);
    }
  }
  if (jobs.empty()) throw DataError("eval: no training target has enough references");
  Tensor images = images_for(jobs);
  Tensor target = truths(jobs);
  rep.seen_generated = static_cast<int>(jobs.size());
  rep.seen_content_accuracy = classifier_accuracy(phi_content, images, content_labels, true);
  if (phi_style && phi_style->config().I > 0)
    rep.seen_style_accuracy = classifier_accuracy(*phi_style, images, style_labels, false);
  {
    NoGradGuard no_grad;
    rep.seen_pixel_l1 = mean(abs(sub(images, target)), kAll).item();
  }
  return rep;
}

std::string EvalReport::to_text() const {
  std::ostringstream ss;
  ss << std::setprecision(6);
  ss << "heldout_content_accuracy = " << heldout_content_accuracy << "\n";
  ss << "heldout_pixel_l1 = " << heldout_pixel_l1 << "\n";
  ss << "heldout_generated = " << heldout_generated << "\n";
  for (const auto& [s, a] : heldout_per_style) ss << "heldout_style_" << s << "_content_accuracy = " << a << "\n";
  ss << "seen_content_accuracy = " << seen_content_accuracy << "\n";
  ss << "seen_style_accuracy = " << seen_style_accuracy << "\n";
  ss << "seen_pixel_l1 = " << seen_pixel_l1 << "\n";
  ss << "seen_generated = " << seen_generated << "\n";
  return ss.str();
}

}  // namespace gwnet
