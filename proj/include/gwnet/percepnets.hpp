#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gwnet/checkpoint.hpp"
#include "gwnet/glyphdata.hpp"
#include "gwnet/params.hpp"

namespace gwnet {

enum class ClassifierTarget { content, style, both };
const char* to_string(ClassifierTarget t);
ClassifierTarget classifier_target_from_string(std::string_view s);

/// Tap names, one per block (last conv of the block, after ReLU).
inline const std::vector<std::string>& tap_names() {
  static const std::vector<std::string> names{"phi1-2", "phi2-2", "phi3-3", "phi4-3", "phi5-3"};
  return names;
}

struct ClassifierConfig {
  int size = 64;
  int J = 0;  // content classes (head present when > 0)
  int I = 0;  // style classes (head present when > 0)
  std::vector<int> widths{16, 32, 64, 128, 128};
  std::vector<int> convs{2, 2, 3, 3, 3};
  ClassifierTarget target = ClassifierTarget::both;
};

struct ClassifierOutput {
  Tensor content_logits;  // (B, J, 1, 1) or undefined
  Tensor style_logits;    // (B, I, 1, 1) or undefined
  std::map<std::string, Tensor> taps;
};

/// Mini-VGG with five conv blocks and max-pool between them.
class Classifier {
 public:
  Classifier(const ClassifierConfig& cfg, std::uint64_t seed);

  const ClassifierConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// x: (B, 1, S, S). Only the requested taps are returned; the forward
  /// stops after the deepest one unless logits are wanted.
  ClassifierOutput forward(const Tensor& x, const std::vector<std::string>& taps,
                           bool logits = true) const;
  std::map<std::string, Tensor> extract_features(const Tensor& x,
                                                 const std::vector<std::string>& taps) const;

  Checkpoint to_checkpoint() const;
  static Classifier from_checkpoint(const Checkpoint& ckpt);

 private:
  ClassifierConfig cfg_;
  ParamStore params_;
};

struct ClassifierReport {
  double content_accuracy = -1;  // on the training images; -1 when no head
  double style_accuracy = -1;
  double final_loss = 0;
  int epochs = 0;
  std::size_t images = 0;
};

struct ClassifierTrainOptions {
  int epochs = 80;
  int batch = 16;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  int width_divisor = 1;
  // Stop once every head classifies the whole training set for two
  // consecutive epochs.
  bool early_stop = true;
  // Sanity control: shuffles labels among the images before training.
  bool permute_labels = false;
};

/// Training images: target writers 1..I (not held out) for every head; the
/// content head also sees the prototype fonts.
Classifier train_classifier(const GlyphPack& pack, ClassifierTarget target,
                            const ClassifierTrainOptions& opt, ClassifierReport* report = nullptr);

/// Accuracy of the requested head on the given labelled glyph batch.
double classifier_accuracy(const Classifier& net, const Tensor& images, const std::vector<int>& labels,
                           bool content_head);

}  // namespace gwnet
