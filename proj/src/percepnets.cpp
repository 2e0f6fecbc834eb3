#include "gwnet/percepnets.hpp"

#include <algorithm>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "gwnet/ops.hpp"

namespace gwnet {

const char* to_string(ClassifierTarget t) {
  switch (t) {
    case ClassifierTarget::content: return "content";
    case ClassifierTarget::style: return "style";
    case ClassifierTarget::both: return "both";
  }
  return "?";
}

ClassifierTarget classifier_target_from_string(std::string_view s) {
  if (s == "content") return ClassifierTarget::content;
  if (s == "style") return ClassifierTarget::style;
  if (s == "both") return ClassifierTarget::both;
  throw std::invalid_argument("unknown classifier target '" + std::string(s) + "'");
}

namespace {

std::string conv_name(int block, int k) {
  return "b" + std::to_string(block + 1) + ".conv" + std::to_string(k + 1);
}

int tap_index(const std::string& name) {
  const auto& names = tap_names();
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) {
    throw std::invalid_argument("unknown feature tap '" + name + "' (phi1-2 phi2-2 phi3-3 phi4-3 phi5-3)");
  }
  return static_cast<int>(it - names.begin());
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<int> split(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

}  // namespace

Classifier::Classifier(const ClassifierConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.widths.size() != 5 || cfg_.convs.size() != 5) {
    throw std::invalid_argument("classifier needs 5 widths and 5 conv counts");
  }
  if (cfg_.size != 64 && cfg_.size != 32) throw std::invalid_argument("classifier size must be 64 or 32");
  std::mt19937_64 rng(seed);
  int in = 1;
  for (int b = 0; b < 5; ++b) {
    for (int k = 0; k < cfg_.convs[b]; ++k) {
      // He-style scale keeps the deep ReLU stack trainable from scratch.
      const double std = std::sqrt(2.0 / (9.0 * in));
      params_.normal(conv_name(b, k) + ".w", Shape{cfg_.widths[b], in, 3, 3}, rng, std);
      params_.constant(conv_name(b, k) + ".b", Shape{1, cfg_.widths[b], 1, 1}, 0.0);
      in = cfg_.widths[b];
    }
  }
  if (cfg_.J > 0) {
    params_.normal("head_content.w", Shape{cfg_.J, in, 1, 1}, rng, std::sqrt(1.0 / in));
    params_.constant("head_content.b", Shape{1, cfg_.J, 1, 1}, 0.0);
  }
  if (cfg_.I > 0) {
    params_.normal("head_style.w", Shape{cfg_.I, in, 1, 1}, rng, std::sqrt(1.0 / in));
    params_.constant("head_style.b", Shape{1, cfg_.I, 1, 1}, 0.0);
  }
}

ClassifierOutput Classifier::forward(const Tensor& x, const std::vector<std::string>& taps,
                                     bool logits) const {
  if (x.shape().c != 1 || x.shape().h != cfg_.size || x.shape().w != cfg_.size) {
    throw ShapeError("classifier: expected (B,1," + std::to_string(cfg_.size) + "," +
                     std::to_string(cfg_.size) + "), got " + x.shape().str());
  }
  int deepest = logits ? 4 : -1;
  for (const std::string& t : taps) deepest = std::max(deepest, tap_index(t));
  ClassifierOutput out;
  Tensor h = x;
  for (int b = 0; b <= deepest; ++b) {
    for (int k = 0; k < cfg_.convs[b]; ++k) {
      const std::string n = conv_name(b, k);
      h = relu(conv2d(h, params_.get(n + ".w"), params_.get(n + ".b"), 1, 1));
    }
    const std::string& name = tap_names()[b];
    if (std::find(taps.begin(), taps.end(), name) != taps.end()) out.taps[name] = h;
    h = max_pool2(h);
  }
  if (logits) {
    Tensor pooled = mean(h, kSpatial);
    if (cfg_.J > 0) {
      out.content_logits = conv2d(pooled, params_.get("head_content.w"), params_.get("head_content.b"), 1, 0);
    }
    if (cfg_.I > 0) {
      out.style_logits = conv2d(pooled, params_.get("head_style.w"), params_.get("head_style.b"), 1, 0);
    }
  }
  return out;
}

std::map<std::string, Tensor> Classifier::extract_features(const Tensor& x,
                                                           const std::vector<std::string>& taps) const {
  return forward(x, taps, false).taps;
}

Checkpoint Classifier::to_checkpoint() const {
  Checkpoint c;
  c.magic = kClassifierMagic;
  c.set("size", std::to_string(cfg_.size));
  c.set("J", std::to_string(cfg_.J));
  c.set("I", std::to_string(cfg_.I));
  c.set("widths", join(cfg_.widths));
  c.set("convs", join(cfg_.convs));
  c.set("target", to_string(cfg_.target));
  for (const std::string& n : params_.param_names()) c.blobs.emplace_back(n, params_.get(n));
  return c;
}

Classifier Classifier::from_checkpoint(const Checkpoint& ckpt) {
  ClassifierConfig cfg;
  try {
    cfg.size = std::stoi(ckpt.get("size"));
    cfg.J = std::stoi(ckpt.get("J"));
    cfg.I = std::stoi(ckpt.get("I"));
    cfg.widths = split(ckpt.get("widths"));
    cfg.convs = split(ckpt.get("convs"));
  } catch (const std::logic_error& e) {
    throw DataError(std::string("classifier checkpoint: bad config (") + e.what() + ")");
  }
  cfg.target = classifier_target_from_string(ckpt.get("target"));
  Classifier net(cfg, 0);
  ParamStore loaded;
  for (const auto& [name, t] : ckpt.blobs) loaded.constant(name, t.shape(), 0.0);
  for (const auto& [name, t] : ckpt.blobs) {
    auto d = loaded.get(name).mutable_data();
    std::copy(t.data().begin(), t.data().end(), d.begin());
  }
  for (const std::string& n : net.params_.param_names()) {
    if (!loaded.contains(n)) throw DataError("classifier checkpoint: missing tensor '" + n + "'");
  }
  net.params_.copy_from(loaded);
  return net;
}

namespace {

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  const Shape& s = logits.shape();
  std::vector<double> onehot(s.numel(), 0.0);
  for (int n = 0; n < s.n; ++n) onehot[std::size_t(n) * s.c + labels[n]] = 1.0;
  Tensor picked = mul(log_softmax(logits), Tensor(s, std::move(onehot)));
  return scale(sum_all(picked), -1.0 / s.n);
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const Shape& s = logits.shape();
  auto d = logits.data();
  std::vector<int> out(s.n);
  for (int n = 0; n < s.n; ++n) {
    const double* row = d.data() + std::size_t(n) * s.c;
    out[n] = static_cast<int>(std::max_element(row, row + s.c) - row);
  }
  return out;
}

}  // namespace

double classifier_accuracy(const Classifier& net, const Tensor& images, const std::vector<int>& labels,
                           bool content_head) {
  NoGradGuard no_grad;
  const int B = images.shape().n;
  if (static_cast<int>(labels.size()) != B) throw std::invalid_argument("accuracy: label count mismatch");
  if (B == 0) return 0.0;
  int correct = 0;
  constexpr int chunk = 32;
  for (int start = 0; start < B; start += chunk) {
    const int len = std::min(chunk, B - start);
    ClassifierOutput out = net.forward(narrow(images, 0, start, len), {});
    const Tensor& logits = content_head ? out.content_logits : out.style_logits;
    if (!logits.defined()) throw std::invalid_argument("accuracy: classifier lacks that head");
    std::vector<int> pred = argmax_rows(logits);
    for (int k = 0; k < len; ++k) correct += pred[k] == labels[start + k];
  }
  return static_cast<double>(correct) / B;
}

Classifier train_classifier(const GlyphPack& pack, ClassifierTarget target,
                            const ClassifierTrainOptions& opt, ClassifierReport* report) {
  const PackManifest& m = pack.manifest();
  const bool want_content = target != ClassifierTarget::style;
  const bool want_style = target != ClassifierTarget::content;

  std::vector<const GlyphImage*> images;
  for (int i : pack.training_styles()) {
    for (int j : pack.contents_of(i)) images.push_back(&pack.at(i, j));
  }
  if (target == ClassifierTarget::content) {
    for (int c : m.prototype_styles) {
      for (int j : pack.contents_of(c)) images.push_back(&pack.at(c, j));
    }
  }
  std::vector<int> content_labels, style_labels;
  for (const GlyphImage* g : images) {
    content_labels.push_back(g->content_id - 1);
    style_labels.push_back(g->style_id - 1);
  }
  auto distinct = [](std::vector<int> v) {
    std::sort(v.begin(), v.end());
    return std::unique(v.begin(), v.end()) - v.begin();
  };
  if (want_content && distinct(content_labels) < 2) {
    throw DataError("train_classifier: content head needs >= 2 content classes");
  }
  if (want_style && distinct(style_labels) < 2) {
    throw DataError("train_classifier: style head needs >= 2 style classes");
  }

  ClassifierConfig cfg;
  cfg.size = pack.size();
  cfg.J = want_content ? m.J : 0;
  cfg.I = want_style ? m.I : 0;
  cfg.target = target;
  for (int& w : cfg.widths) w = std::max(1, w / std::max(1, opt.width_divisor));
  Classifier net(cfg, opt.seed);

  std::mt19937_64 rng(opt.seed ^ 0x5eedULL);
  if (opt.permute_labels) {
    std::shuffle(content_labels.begin(), content_labels.end(), rng);
    std::shuffle(style_labels.begin(), style_labels.end(), rng);
  }
  Tensor all = stack_glyphs(images);
  Adam adam(net.params(), AdamConfig{opt.lr, 0.9, 0.999, 1e-8});
  std::vector<int> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  double last_loss = 0;
  int perfect_epochs = 0;
  int epochs_run = 0;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    int batches = 0;
    std::size_t correct = 0, seen = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch) {
      const std::size_t len = std::min<std::size_t>(opt.batch, order.size() - start);
      std::vector<const GlyphImage*> batch;
      std::vector<int> cl, sl;
      for (std::size_t k = 0; k < len; ++k) {
        batch.push_back(images[order[start + k]]);
        cl.push_back(content_labels[order[start + k]]);
        sl.push_back(style_labels[order[start + k]]);
      }
      ClassifierOutput out = net.forward(stack_glyphs(batch), {});
      Tensor loss;
      if (want_content) {
        loss = cross_entropy(out.content_logits, cl);
        std::vector<int> pred = argmax_rows(out.content_logits);
        for (std::size_t k = 0; k < len; ++k) correct += pred[k] == cl[k];
        seen += len;
      }
      if (want_style) {
        std::vector<int> pred = argmax_rows(out.style_logits);
        for (std::size_t k = 0; k < len; ++k) correct += pred[k] == sl[k];
        seen += len;
        Tensor ls = cross_entropy(out.style_logits, sl);
        loss = loss.defined() ? add(loss, ls) : ls;
      }
      check_finite(loss, "classifier cross-entropy");
      adam.step(grad(loss, net.params().params()));
      epoch_loss += loss.item();
      ++batches;
    }
    last_loss = epoch_loss / std::max(1, batches);
    epochs_run = epoch + 1;
    std::clog << "[gwnet] classifier(" << to_string(target) << ") epoch " << epoch + 1 << "/"
              << opt.epochs << " loss " << last_loss << " acc "
              << static_cast<double>(correct) / std::max<std::size_t>(1, seen) << "\n";
    perfect_epochs = correct == seen ? perfect_epochs + 1 : 0;
    if (opt.early_stop && perfect_epochs >= 2) break;
  }
  if (report) {
    report->epochs = epochs_run;
    report->images = images.size();
    report->final_loss = last_loss;
    if (want_content) report->content_accuracy = classifier_accuracy(net, all, content_labels, true);
    if (want_style) report->style_accuracy = classifier_accuracy(net, all, style_labels, false);
  }
  return net;
}

}  // namespace gwnet
