#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gwnet/norm.hpp"
#include "gwnet/params.hpp"
#include "gwnet/tensor.hpp"

namespace gwnet {

enum class MixerVariant { bn, adain };
enum class BlockKind { residual, dense };

const char* to_string(MixerVariant v);
const char* to_string(BlockKind k);
MixerVariant mixer_variant_from_string(std::string_view s);
BlockKind block_kind_from_string(std::string_view s);

struct MixerConfig {
  MixerVariant variant = MixerVariant::bn;
  BlockKind block = BlockKind::residual;
  int blocks_per_layer = 3;
  // Layers gamma >= deep_boundary (1-based, 1 = shallowest) use the
  // concatenation shortcut; shallower ones run blocks on the content path.
  int deep_boundary = 4;
  int style_transform_depth = 2;
};

struct WNetConfig {
  int size = 64;  // 64, or 32 for the 5-layer reduced mode
  int M = 3;
  int I = 5;      // style classes of the auxiliary classifier
  std::vector<int> enc_widths;     // one per encoder layer
  std::vector<int> critic_widths;  // five critic blocks
  MixerConfig mixer;

  /// Full-size defaults for the given resolution.
  static WNetConfig defaults(int size = 64);
  /// Same topology with every width divided by `divisor` (min 1 channel).
  WNetConfig reduced(int divisor) const;

  int layers() const { return static_cast<int>(enc_widths.size()); }
  void validate() const;

  std::vector<std::pair<std::string, std::string>> to_kv() const;
  static WNetConfig from_kv(const std::map<std::string, std::string>& kv);
};

int encoder_layers_for(int size);

/// Per-layer encoder outputs, shallowest first. back() is the terminal
/// (B, C, 1, 1) vector.
struct EncoderFeatures {
  std::vector<Tensor> layers;
  const Tensor& terminal() const { return layers.back(); }
};

/// Everything one generator pass computes; the encoder features feed the
/// constant losses without re-encoding the inputs.
struct GeneratorPass {
  Tensor image;  // (B, 1, S, S) in (-1, 1)
  EncoderFeatures content;
  EncoderFeatures style;
};

/// Generator G = Dec(mix(Enc_p, Enc_r)).
class Generator {
 public:
  Generator(const WNetConfig& cfg, std::uint64_t seed);

  const WNetConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// prototypes: (B, M, S, S).
  EncoderFeatures encode_content(const Tensor& prototypes, bool training);
  /// references: (B·L, 1, S, S), consecutive runs of L belong to one sample.
  /// Each layer is concat(avg, max, min) over the set: (B, 3C, h, w).
  EncoderFeatures encode_style(const Tensor& references, int L, bool training);
  /// Per-reference style encoder output before set reduction.
  EncoderFeatures encode_style_raw(const Tensor& references, bool training);

  /// gamma is 1-based.
  Tensor mix_features(int gamma, const Tensor& fp, const Tensor& fr, bool training);
  Tensor style_transform(int gamma, const Tensor& fr);
  Tensor decode(const std::vector<Tensor>& mixed, bool training);

  Tensor generate(const Tensor& prototypes, const Tensor& references, int L, bool training);
  GeneratorPass forward(const Tensor& prototypes, const Tensor& references, int L, bool training);

  /// Channels of the mixed feature at layer gamma.
  int mixed_channels(int gamma) const;

 private:
  Tensor norm(const std::string& prefix, const Tensor& x, NormKind kind, bool training);
  Tensor block(const std::string& prefix, const Tensor& x, const SpatialStats* style,
               bool training);

  WNetConfig cfg_;
  ParamStore params_;
  std::map<std::string, RunningStats> running_;
  NormKind content_norm_, style_norm_, block_norm_, dec_norm_;
};

struct CriticOutput {
  Tensor critic;  // (B, 1, 1, 1)
  Tensor logits;  // (B, I, 1, 1)
};

/// Critic D with auxiliary style classifier. Layer norm trunk.
class Critic {
 public:
  Critic(const WNetConfig& cfg, std::uint64_t seed);

  const WNetConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Each argument (B, 1, S, S); fused by channel concat.
  CriticOutput discriminate(const Tensor& prototype_pick, const Tensor& candidate,
                            const Tensor& reference_pick) const;

 private:
  WNetConfig cfg_;
  ParamStore params_;
};

}  // namespace gwnet
