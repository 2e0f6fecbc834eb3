#include "gwnet/wnet.hpp"

#include <algorithm>
#include <stdexcept>

#include "gwnet/ops.hpp"

namespace gwnet {

const char* to_string(MixerVariant v) { return v == MixerVariant::bn ? "bn" : "adain"; }
const char* to_string(BlockKind k) { return k == BlockKind::residual ? "residual" : "dense"; }

MixerVariant mixer_variant_from_string(std::string_view s) {
  if (s == "bn") return MixerVariant::bn;
  if (s == "adain") return MixerVariant::adain;
  throw std::invalid_argument("unknown mixer variant '" + std::string(s) + "' (bn|adain)");
}

BlockKind block_kind_from_string(std::string_view s) {
  if (s == "residual") return BlockKind::residual;
  if (s == "dense") return BlockKind::dense;
  throw std::invalid_argument("unknown block kind '" + std::string(s) + "' (residual|dense)");
}

int encoder_layers_for(int size) {
  if (size == 64) return 6;
  if (size == 32) return 5;
  throw std::invalid_argument("glyph size must be 64 or 32, got " + std::to_string(size));
}

WNetConfig WNetConfig::defaults(int size) {
  WNetConfig c;
  c.size = size;
  c.enc_widths = {64, 128, 256, 512, 512, 512};
  c.enc_widths.resize(encoder_layers_for(size));
  c.critic_widths = {64, 128, 256, 512, 512};
  if (size == 32) c.mixer.deep_boundary = 3;
  return c;
}

WNetConfig WNetConfig::reduced(int divisor) const {
  if (divisor < 1) throw std::invalid_argument("width divisor must be >= 1");
  WNetConfig c = *this;
  for (int& w : c.enc_widths) w = std::max(1, w / divisor);
  for (int& w : c.critic_widths) w = std::max(1, w / divisor);
  return c;
}

void WNetConfig::validate() const {
  const int L = encoder_layers_for(size);
  if (layers() != L) {
    throw std::invalid_argument("size " + std::to_string(size) + " needs " + std::to_string(L) +
                                " encoder widths, got " + std::to_string(layers()));
  }
  if (critic_widths.size() != 5) throw std::invalid_argument("critic needs 5 widths");
  for (int w : enc_widths) {
    if (w < 1) throw std::invalid_argument("encoder widths must be positive");
  }
  for (int w : critic_widths) {
    if (w < 1) throw std::invalid_argument("critic widths must be positive");
  }
  if (M < 1) throw std::invalid_argument("M must be >= 1");
  if (I < 2) throw std::invalid_argument("I must be >= 2 for the auxiliary classifier");
  if (mixer.deep_boundary < 1 || mixer.deep_boundary > L) {
    throw std::invalid_argument("deep_boundary must lie in [1.." + std::to_string(L) + "]");
  }
  if (mixer.blocks_per_layer < 1) throw std::invalid_argument("blocks_per_layer must be >= 1");
  if (mixer.style_transform_depth < 1) throw std::invalid_argument("style_transform_depth must be >= 1");
}

namespace {

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<int> split_ints(const std::string& s, const std::string& key) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t next = s.find(',', pos);
    std::string tok = s.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw std::invalid_argument("'" + key + "': bad integer list '" + s + "'");
    }
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return out;
}

int get_int(const std::map<std::string, std::string>& kv, const std::string& key, int fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    int v = std::stoi(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("'" + key + "': expected an integer, got '" + it->second + "'");
  }
}

}  // namespace

std::vector<std::pair<std::string, std::string>> WNetConfig::to_kv() const {
  return {{"size", std::to_string(size)},
          {"M", std::to_string(M)},
          {"I", std::to_string(I)},
          {"enc_widths", join(enc_widths)},
          {"critic_widths", join(critic_widths)},
          {"variant", to_string(mixer.variant)},
          {"block", to_string(mixer.block)},
          {"blocks_per_layer", std::to_string(mixer.blocks_per_layer)},
          {"deep_boundary", std::to_string(mixer.deep_boundary)},
          {"style_transform_depth", std::to_string(mixer.style_transform_depth)}};
}

WNetConfig WNetConfig::from_kv(const std::map<std::string, std::string>& kv) {
  WNetConfig c = defaults(get_int(kv, "size", 64));
  c.M = get_int(kv, "M", c.M);
  c.I = get_int(kv, "I", c.I);
  if (kv.count("enc_widths")) c.enc_widths = split_ints(kv.at("enc_widths"), "enc_widths");
  if (kv.count("critic_widths")) c.critic_widths = split_ints(kv.at("critic_widths"), "critic_widths");
  if (kv.count("variant")) c.mixer.variant = mixer_variant_from_string(kv.at("variant"));
  if (kv.count("block")) c.mixer.block = block_kind_from_string(kv.at("block"));
  c.mixer.blocks_per_layer = get_int(kv, "blocks_per_layer", c.mixer.blocks_per_layer);
  c.mixer.deep_boundary = get_int(kv, "deep_boundary", c.mixer.deep_boundary);
  c.mixer.style_transform_depth = get_int(kv, "style_transform_depth", c.mixer.style_transform_depth);
  c.validate();
  return c;
}

// ---------------------------------------------------------------- generator

namespace {

constexpr int kTrunkK = 5;
constexpr int kTrunkStride = 2;
constexpr int kTrunkPad = 2;

int growth(int C) { return std::max(1, C / 2); }

// Widest block input at a shallow layer; the transformed style feature
// carries this many channels so every block can draw its AdaIN statistics
// from a prefix slice.
int block_input_max(const MixerConfig& m, int C) {
  return m.block == BlockKind::dense ? C + (m.blocks_per_layer - 1) * growth(C) : C;
}

std::string layer_name(const char* part, int gamma) {
  return std::string(part) + "." + std::to_string(gamma);
}

void add_conv(ParamStore& ps, std::mt19937_64& rng, const std::string& prefix, int out, int in,
              int k) {
  ps.normal(prefix + ".w", Shape{out, in, k, k}, rng);
  ps.constant(prefix + ".b", Shape{1, out, 1, 1}, 0.0);
}

void add_deconv(ParamStore& ps, std::mt19937_64& rng, const std::string& prefix, int in, int out,
                int k) {
  ps.normal(prefix + ".w", Shape{in, out, k, k}, rng);
  ps.constant(prefix + ".b", Shape{1, out, 1, 1}, 0.0);
}

void add_norm(ParamStore& ps, const std::string& prefix, NormKind kind, int C) {
  if (kind == NormKind::none) return;
  ps.constant(prefix + ".gamma", Shape{1, C, 1, 1}, 1.0);
  ps.constant(prefix + ".beta", Shape{1, C, 1, 1}, 0.0);
  if (kind == NormKind::batch) {
    ps.buffer(prefix + ".running_mean", Shape{1, C, 1, 1}, 0.0);
    ps.buffer(prefix + ".running_var", Shape{1, C, 1, 1}, 1.0);
  }
}

// Statistics of the combined style feature for aligning a C-channel content
// map: the avg/max/min slices of channel c are pooled together.
Tensor joint_style_view(const Tensor& fr, int C) {
  if (fr.shape().c != 3 * C) {
    throw ShapeError("style feature has C=" + std::to_string(fr.shape().c) + ", expected 3x" +
                     std::to_string(C));
  }
  return concat({narrow(fr, 1, 0, C), narrow(fr, 1, C, C), narrow(fr, 1, 2 * C, C)}, 2);
}

}  // namespace

Generator::Generator(const WNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const bool ada = cfg_.mixer.variant == MixerVariant::adain;
  content_norm_ = ada ? NormKind::layer : NormKind::batch;
  style_norm_ = ada ? NormKind::none : NormKind::batch;
  block_norm_ = ada ? NormKind::none : NormKind::batch;  // AdaIN supplies the affine
  dec_norm_ = ada ? NormKind::instance : NormKind::batch;

  std::mt19937_64 rng(seed);
  const int L = cfg_.layers();
  const auto& W = cfg_.enc_widths;
  for (int g = 1; g <= L; ++g) {
    const int in = g == 1 ? cfg_.M : W[g - 2];
    add_conv(params_, rng, layer_name("enc_p", g), W[g - 1], in, kTrunkK);
    add_norm(params_, layer_name("enc_p", g), content_norm_, W[g - 1]);
  }
  for (int g = 1; g <= L; ++g) {
    const int in = g == 1 ? 1 : W[g - 2];
    add_conv(params_, rng, layer_name("enc_r", g), W[g - 1], in, kTrunkK);
    add_norm(params_, layer_name("enc_r", g), style_norm_, W[g - 1]);
  }
  for (int g = 1; g < cfg_.mixer.deep_boundary; ++g) {
    const int C = W[g - 1];
    int ch = C;
    for (int b = 0; b < cfg_.mixer.blocks_per_layer; ++b) {
      const std::string p = layer_name("mix", g) + ".block" + std::to_string(b);
      add_norm(params_, p, block_norm_, ch);
      const int out = cfg_.mixer.block == BlockKind::dense ? growth(C) : C;
      add_conv(params_, rng, p + ".conv", out, ch, 3);
      if (cfg_.mixer.block == BlockKind::dense) ch += out;
    }
    if (ada) {
      const int Cg = block_input_max(cfg_.mixer, C);
      for (int d = 0; d < cfg_.mixer.style_transform_depth; ++d) {
        add_conv(params_, rng, layer_name("style_g", g) + ".conv" + std::to_string(d), Cg,
                 d == 0 ? 3 * C : Cg, 3);
      }
    }
  }
  for (int k = L; k >= 1; --k) {
    const int in = k == L ? mixed_channels(L) : W[k - 1] + mixed_channels(k);
    const int out = k == 1 ? 1 : W[k - 2];
    add_deconv(params_, rng, layer_name("dec", k), in, out, kTrunkK);
    if (k > 1) add_norm(params_, layer_name("dec", k), dec_norm_, out);
  }
  // The decoder must consume exactly what the mixer emits.
  for (int g = 1; g <= L; ++g) {
    const int expect = g == L ? params_.get(layer_name("dec", L) + ".w").shape().n
                              : params_.get(layer_name("dec", g) + ".w").shape().n - W[g - 1];
    if (expect != mixed_channels(g)) {
      throw ShapeError("decoder layer " + std::to_string(g) + " expects " + std::to_string(expect) +
                       " mixed channels, mixer emits " + std::to_string(mixed_channels(g)));
    }
  }
}

int Generator::mixed_channels(int gamma) const {
  const int C = cfg_.enc_widths.at(gamma - 1);
  if (gamma >= cfg_.mixer.deep_boundary) return 4 * C;
  if (cfg_.mixer.block == BlockKind::dense) return C + cfg_.mixer.blocks_per_layer * growth(C);
  return C;
}

Tensor Generator::norm(const std::string& prefix, const Tensor& x, NormKind kind, bool training) {
  if (kind == NormKind::none) return x;
  const Tensor& g = params_.get(prefix + ".gamma");
  const Tensor& b = params_.get(prefix + ".beta");
  if (kind == NormKind::batch) {
    RunningStats rs{params_.get(prefix + ".running_mean"), params_.get(prefix + ".running_var")};
    return normalize(x, kind, g, b, kNormEps, &rs, training);
  }
  return normalize(x, kind, g, b, kNormEps);
}

namespace {

Tensor conv_named(const ParamStore& ps, const std::string& prefix, const Tensor& x, int stride,
                  int pad) {
  return conv2d(x, ps.get(prefix + ".w"), ps.get(prefix + ".b"), stride, pad);
}

}  // namespace

EncoderFeatures Generator::encode_content(const Tensor& prototypes, bool training) {
  if (prototypes.shape().c != cfg_.M) {
    throw ShapeError("encode_content: got " + std::to_string(prototypes.shape().c) +
                     " prototypes, the model takes M=" + std::to_string(cfg_.M));
  }
  if (prototypes.shape().h != cfg_.size || prototypes.shape().w != cfg_.size) {
    throw ShapeError("encode_content: glyphs are " + prototypes.shape().str() + ", model size " +
                     std::to_string(cfg_.size));
  }
  EncoderFeatures f;
  Tensor x = prototypes;
  for (int g = 1; g <= cfg_.layers(); ++g) {
    const std::string p = layer_name("enc_p", g);
    x = relu(norm(p, conv_named(params_, p, x, kTrunkStride, kTrunkPad), content_norm_, training));
    f.layers.push_back(x);
  }
  return f;
}

EncoderFeatures Generator::encode_style_raw(const Tensor& references, bool training) {
  if (references.shape().c != 1) {
    throw ShapeError("encode_style: references must be single-channel, got " +
                     references.shape().str());
  }
  if (references.shape().h != cfg_.size || references.shape().w != cfg_.size) {
    throw ShapeError("encode_style: glyphs are " + references.shape().str() + ", model size " +
                     std::to_string(cfg_.size));
  }
  EncoderFeatures f;
  Tensor x = references;
  for (int g = 1; g <= cfg_.layers(); ++g) {
    const std::string p = layer_name("enc_r", g);
    x = relu(norm(p, conv_named(params_, p, x, kTrunkStride, kTrunkPad), style_norm_, training));
    f.layers.push_back(x);
  }
  return f;
}

EncoderFeatures Generator::encode_style(const Tensor& references, int L, bool training) {
  if (L < 1) throw std::invalid_argument("encode_style: reference set is empty");
  if (references.shape().n % L != 0) {
    throw ShapeError("encode_style: " + std::to_string(references.shape().n) +
                     " references do not split into sets of " + std::to_string(L));
  }
  EncoderFeatures raw = encode_style_raw(references, training);
  EncoderFeatures f;
  for (const Tensor& t : raw.layers) {
    f.layers.push_back(concat({group_reduce(t, L, SetReduce::avg), group_reduce(t, L, SetReduce::max),
                               group_reduce(t, L, SetReduce::min)},
                              1));
  }
  return f;
}

Tensor Generator::style_transform(int gamma, const Tensor& fr) {
  if (cfg_.mixer.variant != MixerVariant::adain || gamma >= cfg_.mixer.deep_boundary) {
    throw std::logic_error("style_transform exists only on shallow AdaIN layers");
  }
  Tensor x = fr;
  for (int d = 0; d < cfg_.mixer.style_transform_depth; ++d) {
    x = relu(conv_named(params_, layer_name("style_g", gamma) + ".conv" + std::to_string(d), x, 1, 1));
  }
  return x;
}

Tensor Generator::block(const std::string& prefix, const Tensor& x, const SpatialStats* style,
                        bool training) {
  Tensor h;
  if (style) {
    const int C = x.shape().c;
    SpatialStats s{narrow(style->mean, 1, 0, C), narrow(style->sigma, 1, 0, C)};
    h = adain_with_stats(x, s);
  } else {
    h = norm(prefix, x, block_norm_, training);
  }
  h = conv_named(params_, prefix + ".conv", relu(h), 1, 1);
  if (cfg_.mixer.block == BlockKind::dense) return concat({x, h}, 1);
  return add(x, h);
}

Tensor Generator::mix_features(int gamma, const Tensor& fp, const Tensor& fr, bool training) {
  const int L = cfg_.layers();
  if (gamma < 1 || gamma > L) throw std::invalid_argument("mix_features: layer out of range");
  const int C = cfg_.enc_widths[gamma - 1];
  if (fp.shape().c != C || fr.shape().c != 3 * C) {
    throw ShapeError("mix_features: layer " + std::to_string(gamma) + " expects content C=" +
                     std::to_string(C) + " and style C=" + std::to_string(3 * C) + ", got " +
                     fp.shape().str() + " and " + fr.shape().str());
  }
  if (gamma >= cfg_.mixer.deep_boundary) return concat({fp, fr}, 1);

  const bool ada = cfg_.mixer.variant == MixerVariant::adain;
  Tensor x = fp;
  SpatialStats gstats;
  if (ada) {
    x = adain(fp, joint_style_view(fr, C));
    gstats = spatial_stats(style_transform(gamma, fr));
  }
  for (int b = 0; b < cfg_.mixer.blocks_per_layer; ++b) {
    x = block(layer_name("mix", gamma) + ".block" + std::to_string(b), x, ada ? &gstats : nullptr,
              training);
  }
  return x;
}

Tensor Generator::decode(const std::vector<Tensor>& mixed, bool training) {
  const int L = cfg_.layers();
  if (static_cast<int>(mixed.size()) != L) {
    throw std::invalid_argument("decode: expected " + std::to_string(L) + " mixed features, got " +
                                std::to_string(mixed.size()));
  }
  for (int g = 1; g <= L; ++g) {
    if (!mixed[g - 1].defined()) {
      throw std::invalid_argument("decode: missing mixed feature for layer " + std::to_string(g));
    }
  }
  Tensor d = mixed[L - 1];
  for (int k = L; k >= 1; --k) {
    const std::string p = layer_name("dec", k);
    Tensor y = deconv2d(d, params_.get(p + ".w"), params_.get(p + ".b"), kTrunkStride, kTrunkPad, 1);
    if (k == 1) return tanh(y);
    y = leaky_relu(norm(p, y, dec_norm_, training));
    d = concat({y, mixed[k - 2]}, 1);
  }
  return d;  // unreachable
}

GeneratorPass Generator::forward(const Tensor& prototypes, const Tensor& references, int L,
                                 bool training) {
  GeneratorPass pass;
  pass.content = encode_content(prototypes, training);
  pass.style = encode_style(references, L, training);
  const auto& fp = pass.content.layers;
  const auto& fr = pass.style.layers;
  if (fr[0].shape().n != fp[0].shape().n) {
    throw ShapeError("generate: " + std::to_string(fp[0].shape().n) + " prototype sets but " +
                     std::to_string(fr[0].shape().n) + " reference sets");
  }
  std::vector<Tensor> mixed;
  for (int g = 1; g <= cfg_.layers(); ++g) {
    mixed.push_back(mix_features(g, fp[g - 1], fr[g - 1], training));
  }
  pass.image = decode(mixed, training);
  return pass;
}

Tensor Generator::generate(const Tensor& prototypes, const Tensor& references, int L,
                           bool training) {
  return forward(prototypes, references, L, training).image;
}

// ---------------------------------------------------------------- critic

Critic::Critic(const WNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  int in = 3;
  for (int b = 0; b < 5; ++b) {
    const std::string p = "critic." + std::to_string(b);
    add_conv(params_, rng, p, cfg_.critic_widths[b], in, kTrunkK);
    add_norm(params_, p, NormKind::layer, cfg_.critic_widths[b]);
    in = cfg_.critic_widths[b];
  }
  add_conv(params_, rng, "critic.head", 1, in, 1);
  add_conv(params_, rng, "critic.ac", cfg_.I, in, 1);
}

CriticOutput Critic::discriminate(const Tensor& prototype_pick, const Tensor& candidate,
                                  const Tensor& reference_pick) const {
  for (const Tensor* t : {&prototype_pick, &candidate, &reference_pick}) {
    const Shape& s = t->shape();
    if (s.c != 1 || s.h != cfg_.size || s.w != cfg_.size || s.n != candidate.shape().n) {
      throw ShapeError("discriminate: expected (B,1," + std::to_string(cfg_.size) + "," +
                       std::to_string(cfg_.size) + ") inputs, got " + s.str());
    }
  }
  Tensor x = concat({prototype_pick, candidate, reference_pick}, 1);
  for (int b = 0; b < 5; ++b) {
    const std::string p = "critic." + std::to_string(b);
    x = conv_named(params_, p, x, kTrunkStride, kTrunkPad);
    x = leaky_relu(normalize(x, NormKind::layer, params_.get(p + ".gamma"), params_.get(p + ".beta")));
  }
  Tensor pooled = sum(x, kSpatial);
  return {conv_named(params_, "critic.head", pooled, 1, 0),
          conv_named(params_, "critic.ac", pooled, 1, 0)};
}

}  // namespace gwnet
