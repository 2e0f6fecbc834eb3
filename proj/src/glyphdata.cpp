#include "gwnet/glyphdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gwnet/ops.hpp"
#include "gwnet/png_io.hpp"

namespace gwnet {

namespace fs = std::filesystem;
using nlohmann::json;

Tensor GlyphImage::tensor() const {
  return Tensor(Shape{1, 1, size, size}, pixels);
}

double pixel_from_byte(std::uint8_t p) { return p / 127.5 - 1.0; }

std::uint8_t byte_from_pixel(double v) {
  double p = std::round((v + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(p, 0.0, 255.0));
}

namespace {

std::vector<int> int_list(const json& j, const char* field) {
  if (!j.contains(field)) return {};
  const json& v = j.at(field);
  if (!v.is_array()) throw DataError(std::string("manifest: '") + field + "' must be an array");
  std::vector<int> out;
  for (const json& e : v) {
    if (!e.is_number_integer()) {
      throw DataError(std::string("manifest: '") + field + "' must hold integers");
    }
    out.push_back(e.get<int>());
  }
  return out;
}

int required_int(const json& j, const char* field) {
  if (!j.contains(field)) throw DataError(std::string("manifest: missing field '") + field + "'");
  if (!j.at(field).is_number_integer()) {
    throw DataError(std::string("manifest: field '") + field + "' must be an integer");
  }
  return j.at(field).get<int>();
}

}  // namespace

PackManifest parse_manifest(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("manifest: not valid JSON (") + e.what() + ")");
  }
  if (!j.is_object()) throw DataError("manifest: top level must be an object");
  PackManifest m;
  m.version = j.contains("version") ? required_int(j, "version") : 1;
  if (m.version != 1) throw DataError("manifest: unsupported field 'version' = " + std::to_string(m.version));
  m.I = required_int(j, "I");
  m.J = required_int(j, "J");
  if (m.I < 1) throw DataError("manifest: field 'I' must be >= 1");
  if (m.J < 1) throw DataError("manifest: field 'J' must be >= 1");
  if (j.contains("size")) m.size = required_int(j, "size");
  if (m.size != 64 && m.size != 32) throw DataError("manifest: field 'size' must be 64 or 32");
  if (!j.contains("prototype_styles")) throw DataError("manifest: missing field 'prototype_styles'");
  m.prototype_styles = int_list(j, "prototype_styles");
  m.holdout_styles = int_list(j, "holdout_styles");
  if (j.contains("charset")) {
    const json& cs = j.at("charset");
    if (!cs.is_array()) throw DataError("manifest: 'charset' must be an array");
    for (const json& e : cs) {
      if (!e.is_string()) throw DataError("manifest: 'charset' must hold strings");
      m.charset.push_back(e.get<std::string>());
    }
    if (static_cast<int>(m.charset.size()) != m.J) {
      throw DataError("manifest: 'charset' has " + std::to_string(m.charset.size()) +
                      " labels but J = " + std::to_string(m.J));
    }
  }
  return m;
}

std::string manifest_to_json(const PackManifest& m) {
  json j;
  j["version"] = m.version;
  j["I"] = m.I;
  j["J"] = m.J;
  j["size"] = m.size;
  j["prototype_styles"] = m.prototype_styles;
  j["holdout_styles"] = m.holdout_styles;
  j["charset"] = m.charset;
  return j.dump(2) + "\n";
}

GlyphPack::GlyphPack(PackManifest manifest) : manifest_(std::move(manifest)) {}

void GlyphPack::add(GlyphImage image) {
  if (image.size != manifest_.size ||
      image.pixels.size() != static_cast<std::size_t>(image.size) * image.size) {
    throw DataError("glyph (" + std::to_string(image.style_id) + "," +
                    std::to_string(image.content_id) + ") has wrong size");
  }
  if (image.content_id < 1 || image.content_id > manifest_.J) {
    throw DataError("glyph content id " + std::to_string(image.content_id) +
                    " outside 1.." + std::to_string(manifest_.J));
  }
  for (double v : image.pixels) {
    if (!(v >= -1.0 && v <= 1.0)) throw DataError("glyph pixel outside [-1, 1]");
  }
  auto key = std::make_pair(image.style_id, image.content_id);
  images_[key] = std::move(image);
}

bool GlyphPack::has(int style, int content) const {
  return images_.count({style, content}) != 0;
}

const GlyphImage& GlyphPack::at(int style, int content) const {
  auto it = images_.find({style, content});
  if (it == images_.end()) {
    throw DataError("no glyph for style " + std::to_string(style) + ", content " +
                    std::to_string(content));
  }
  return it->second;
}

std::vector<int> GlyphPack::contents_of(int style) const {
  std::vector<int> out;
  for (auto it = images_.lower_bound({style, 0});
       it != images_.end() && it->first.first == style; ++it) {
    out.push_back(it->first.second);
  }
  return out;
}

std::vector<int> GlyphPack::training_styles() const {
  std::vector<int> out;
  for (int i = 1; i <= manifest_.I; ++i) {
    if (std::find(manifest_.holdout_styles.begin(), manifest_.holdout_styles.end(), i) ==
        manifest_.holdout_styles.end()) {
      out.push_back(i);
    }
  }
  return out;
}

std::vector<int> GlyphPack::all_styles() const {
  std::set<int> s;
  for (const auto& [key, img] : images_) s.insert(key.first);
  return {s.begin(), s.end()};
}

void GlyphPack::validate() const {
  const auto& m = manifest_;
  if (m.prototype_styles.empty()) throw DataError("manifest: 'prototype_styles' is empty");
  std::set<int> protos;
  for (int c : m.prototype_styles) {
    if (c >= 1 && c <= m.I) {
      throw DataError("manifest: prototype style " + std::to_string(c) +
                      " overlaps target styles 1.." + std::to_string(m.I));
    }
    if (!protos.insert(c).second) {
      throw DataError("manifest: prototype style " + std::to_string(c) + " listed twice");
    }
    if (contents_of(c).empty()) {
      throw DataError("pack rejected: prototype style " + std::to_string(c) + " has no glyphs");
    }
  }
  for (int h : m.holdout_styles) {
    if (protos.count(h)) {
      throw DataError("manifest: holdout style " + std::to_string(h) + " is also a prototype style");
    }
  }
}

GlyphImage load_glyph(const fs::path& png, int style, int content, int expected_size) {
  GrayImage raw = read_png_gray(png);
  if (raw.width != expected_size || raw.height != expected_size) {
    throw DataError(png.string() + ": image is " + std::to_string(raw.width) + "x" +
                    std::to_string(raw.height) + ", expected " +
                    std::to_string(expected_size) + "x" + std::to_string(expected_size));
  }
  GlyphImage g;
  g.size = expected_size;
  g.style_id = style;
  g.content_id = content;
  g.pixels.resize(raw.pixels.size());
  std::transform(raw.pixels.begin(), raw.pixels.end(), g.pixels.begin(), pixel_from_byte);
  return g;
}

void save_glyph(const fs::path& png, const GlyphImage& g) {
  GrayImage raw;
  raw.width = raw.height = g.size;
  raw.pixels.resize(g.pixels.size());
  std::transform(g.pixels.begin(), g.pixels.end(), raw.pixels.begin(), byte_from_pixel);
  write_png_gray(png, raw);
}

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

GlyphPack import_directory(const fs::path& dir, const fs::path& manifest_path) {
  PackManifest m = parse_manifest(read_text(manifest_path));
  GlyphPack pack(m);
  std::set<int> styles;
  for (int i = 1; i <= m.I; ++i) styles.insert(i);
  styles.insert(m.prototype_styles.begin(), m.prototype_styles.end());
  styles.insert(m.holdout_styles.begin(), m.holdout_styles.end());
  for (int s : styles) {
    for (int j = 1; j <= m.J; ++j) {
      fs::path p = dir / std::to_string(s) / (std::to_string(j) + ".png");
      if (!fs::exists(p)) continue;
      pack.add(load_glyph(p, s, j, m.size));
    }
  }
  pack.validate();
  std::clog << "[gwnet] pack " << dir.string() << ": " << pack.image_count()
            << " glyphs, I=" << m.I << " J=" << m.J << " M=" << pack.M()
            << " size=" << m.size << "\n";
  for (int s : styles) {
    std::clog << "[gwnet]   style " << s << ": " << pack.contents_of(s).size() << "/" << m.J
              << " contents\n";
  }
  return pack;
}

GlyphPack load_pack(const fs::path& dir) {
  return import_directory(dir, dir / "manifest.json");
}

void export_pack(const GlyphPack& pack, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& [key, img] : pack.images()) {
    fs::path sdir = dir / std::to_string(key.first);
    fs::create_directories(sdir);
    save_glyph(sdir / (std::to_string(key.second) + ".png"), img);
  }
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
  out << manifest_to_json(pack.manifest());
}

void write_sheet(const fs::path& png, const std::vector<std::vector<Tensor>>& rows) {
  int cell = 0;
  std::size_t cols = 0;
  for (const auto& row : rows) {
    cols = std::max(cols, row.size());
    for (const Tensor& t : row) {
      if (!t.defined()) continue;
      const Shape& s = t.shape();
      if (s.n != 1 || s.c != 1 || s.h != s.w) {
        throw ShapeError("write_sheet: glyph must be 1x1xSxS, got " + s.str());
      }
      if (cell && cell != s.h) throw ShapeError("write_sheet: mixed glyph sizes");
      cell = s.h;
    }
  }
  if (rows.empty() || cols == 0 || cell == 0) throw DataError("write_sheet: nothing to draw");
  GrayImage img;
  img.width = static_cast<int>(cols) * (cell + 1) + 1;
  img.height = static_cast<int>(rows.size()) * (cell + 1) + 1;
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height, 255);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      if (!rows[r][c].defined()) continue;
      auto d = rows[r][c].data();
      int x0 = static_cast<int>(c) * (cell + 1) + 1;
      int y0 = static_cast<int>(r) * (cell + 1) + 1;
      for (int y = 0; y < cell; ++y) {
        for (int x = 0; x < cell; ++x) {
          img.pixels[std::size_t(y0 + y) * img.width + x0 + x] =
              byte_from_pixel(std::clamp(d[std::size_t(y) * cell + x], -1.0, 1.0));
        }
      }
    }
  }
  write_png_gray(png, img);
}

Sampler::Sampler(const GlyphPack& pack, int N, std::uint64_t seed)
    : pack_(&pack), N_(N), rng_(seed) {
  if (N < 1) throw std::invalid_argument("sampler: N must be >= 1");
  if (pack.M() < 1) throw DataError("sampler: pack has no prototype styles");
  for (int i : pack.training_styles()) {
    std::vector<int> cs = pack.contents_of(i);
    if (cs.empty()) continue;
    if (static_cast<int>(cs.size()) < N + 1) {
      excluded_.push_back(i);
      std::clog << "[gwnet] sampler: style " << i << " has " << cs.size()
                << " contents, needs " << N + 1 << "; excluded\n";
      continue;
    }
    bool any = false;
    for (int j : cs) {
      bool covered = true;
      for (int c : pack.manifest().prototype_styles) covered = covered && pack.has(c, j);
      if (!covered) continue;
      targets_.emplace_back(i, j);
      any = true;
    }
    if (any) contents_[i] = std::move(cs);
  }
  if (targets_.empty()) throw DataError("sampler: no eligible training targets");
}

std::vector<TrainSample> Sampler::next(int batch) {
  const int M = pack_->M();
  std::vector<TrainSample> out;
  out.reserve(batch);
  for (int b = 0; b < batch; ++b) {
    auto [i, j] = targets_[std::uniform_int_distribution<std::size_t>(0, targets_.size() - 1)(rng_)];
    TrainSample s;
    s.target = &pack_->at(i, j);
    for (int c : pack_->manifest().prototype_styles) s.prototypes.push_back(&pack_->at(c, j));
    std::vector<int> pool;
    for (int k : contents_.at(i)) {
      if (k != j) pool.push_back(k);
    }
    // partial Fisher-Yates: first N entries become the references
    for (int n = 0; n < N_; ++n) {
      std::size_t r = std::uniform_int_distribution<std::size_t>(n, pool.size() - 1)(rng_);
      std::swap(pool[n], pool[r]);
      s.references.push_back(&pack_->at(i, pool[n]));
    }
    s.m_pick = std::uniform_int_distribution<int>(0, M - 1)(rng_);
    s.n_pick = std::uniform_int_distribution<int>(0, N_ - 1)(rng_);
    out.push_back(std::move(s));
  }
  return out;
}

std::string Sampler::rng_state() const {
  std::ostringstream ss;
  ss << rng_;
  return ss.str();
}

void Sampler::set_rng_state(const std::string& state) {
  std::istringstream ss(state);
  ss >> rng_;
  if (!ss) throw DataError("sampler: corrupt RNG state");
}

std::vector<TrainSample> sample_batch(const GlyphPack& pack, int batch, int N,
                                      std::uint64_t seed) {
  Sampler sampler(pack, N, seed);
  return sampler.next(batch);
}

InferenceInputs build_inference_inputs(const GlyphPack& pack,
                                       const std::vector<int>& content_ids,
                                       const std::vector<const GlyphImage*>& style_refs) {
  if (style_refs.empty()) throw std::invalid_argument("inference: at least one style reference required");
  InferenceInputs out;
  for (int q : content_ids) {
    InferenceInput in;
    in.content_id = q;
    bool ok = true;
    for (int c : pack.manifest().prototype_styles) {
      if (!pack.has(c, q)) {
        ok = false;
        break;
      }
      in.prototypes.push_back(&pack.at(c, q));
    }
    if (!ok) {
      std::clog << "[gwnet] inference: content " << q << " missing from a prototype font; skipped\n";
      out.skipped.push_back(q);
      continue;
    }
    in.references = style_refs;
    out.items.push_back(std::move(in));
  }
  return out;
}

Tensor stack_glyphs(const std::vector<const GlyphImage*>& glyphs) {
  if (glyphs.empty()) throw ShapeError("stack_glyphs: empty list");
  const int s = glyphs[0]->size;
  std::vector<double> v;
  v.reserve(glyphs.size() * s * s);
  for (const GlyphImage* g : glyphs) {
    if (g->size != s) throw ShapeError("stack_glyphs: mixed glyph sizes");
    v.insert(v.end(), g->pixels.begin(), g->pixels.end());
  }
  return Tensor(Shape{static_cast<int>(glyphs.size()), 1, s, s}, std::move(v));
}

}  // namespace gwnet
