#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "gwnet/checkpoint.hpp"
#include "gwnet/glyphdata.hpp"
#include "gwnet/losses.hpp"
#include "gwnet/params.hpp"
#include "gwnet/percepnets.hpp"
#include "gwnet/wnet.hpp"

namespace gwnet {

struct TrainConfig {
  int M = 3;
  int N = 4;
  int batch = 4;
  int n_critic = 5;
  long steps = 2000;  // generator updates
  AdamConfig adam_g;
  AdamConfig adam_d;
  LossWeights weights;
  WNetConfig net = WNetConfig::defaults(64);
  std::uint64_t seed = 1;
  InputGradMode penalty_mode = InputGradMode::exact;
  std::string precision = "double";  // the only mode
  long log_every = 10;
  long checkpoint_every = 500;
  long sheet_every = 0;  // 0: no sample sheets

  void validate() const;
  std::vector<std::pair<std::string, std::string>> to_kv() const;
  /// Starts from defaults (net sized by `size` if given) and applies `kv`.
  static TrainConfig from_kv(const std::map<std::string, std::string>& kv);
};

/// One minibatch as tensors.
struct Batch {
  Tensor prototypes;   // (B, M, S, S)
  Tensor references;   // (B·N, 1, S, S)
  Tensor targets;      // (B, 1, S, S)
  Tensor proto_pick;   // (B, 1, S, S), prototype m' per sample
  Tensor ref_pick;     // (B, 1, S, S), reference n' per sample
  std::vector<int> styles;    // 1-based
  std::vector<int> contents;  // 1-based
};
Batch make_batch(const std::vector<TrainSample>& samples);

/// Generator, critic, both optimizers and every RNG of a run.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const GlyphPack& pack, Perceptors phi);

  const TrainConfig& config() const { return cfg_; }
  long step() const { return step_; }
  Generator& generator() { return *G_; }
  Critic& critic() { return *D_; }

  /// n_critic critic updates, then one generator update. Throws
  /// NumericError naming the first non-finite term.
  LossReport train_step();

  Checkpoint to_checkpoint() const;
  /// Restores weights, optimizer moments, RNG streams and the step count.
  void restore(const Checkpoint& ckpt);

 private:
  Batch next_batch();

  TrainConfig cfg_;
  const GlyphPack* pack_;
  Perceptors phi_;
  std::unique_ptr<Generator> G_;
  std::unique_ptr<Critic> D_;
  std::unique_ptr<Adam> opt_g_, opt_d_;
  Sampler sampler_;
  std::mt19937_64 rng_;  // interpolation weights of the penalty
  long step_ = 0;
};

struct FitOptions {
  std::filesystem::path out_dir;
  bool resume = false;  // continue from out_dir/latest.ckpt when present
  std::function<void(const LossReport&)> on_step;  // optional observer
  std::map<std::string, std::string> meta;          // extra checkpoint entries
};

/// Runs cfg.steps generator updates. Writes out_dir/log.csv,
/// out_dir/checkpoints/step_XXXXXXX.ckpt (and latest.ckpt), sample sheets
/// under out_dir/sheets, progress lines to stderr. Returns the trainer
/// positioned after the last step.
std::unique_ptr<Trainer> fit(const TrainConfig& cfg, const GlyphPack& pack, Perceptors phi,
                             const FitOptions& opt);

/// Generator weights and config from a training checkpoint.
struct LoadedGenerator {
  TrainConfig config;
  std::unique_ptr<Generator> G;
  std::map<std::string, std::string> meta;  // every config entry
};
LoadedGenerator load_generator(const std::filesystem::path& ckpt);

}  // namespace gwnet
