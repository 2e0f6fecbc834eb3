#pragma once

#include <array>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "gwnet/gradcheck.hpp"
#include "gwnet/percepnets.hpp"
#include "gwnet/wnet.hpp"

namespace gwnet {

struct LossWeights {
  double alpha = 1.0;      // adversarial
  double alpha_gp = 10.0;  // gradient penalty
  double beta = 1.0;       // auxiliary classifier
  double lambda_pixel = 50.0;
  double psi_p = 1.0;  // content-encoder constant loss
  double psi_r = 1.0;  // style-encoder constant loss
  std::array<double, 5> w_real{1, 1, 1, 1, 1};
  std::array<double, 2> w_content{1, 1};
  std::array<double, 2> w_style{1, 1};
  double w_vn = 0.1;

  void validate() const;
  std::vector<std::pair<std::string, std::string>> to_kv() const;
  /// Reads the keys present in `kv`, keeping defaults for the rest.
  static LossWeights from_kv(const std::map<std::string, std::string>& kv);
};

/// One critic input: (B,1,S,S) each.
struct Triple {
  Tensor prototype;
  Tensor candidate;
  Tensor reference;
};

struct AdvLosses {
  Tensor adv_g;  // mean D(fake)
  Tensor adv_d;  // mean D(fake) - mean D(real)
};
/// Per-sample critic score (B,1,1,1) of a triple.
using CriticFn = std::function<Tensor(const Tensor& prototype, const Tensor& candidate,
                                      const Tensor& reference)>;

AdvLosses adv_losses(const Critic& D, const Triple& real, const Triple& fake);
AdvLosses adv_losses(const CriticFn& D, const Triple& real, const Triple& fake);

struct PenaltyResult {
  Tensor penalty;  // mean (||grad|| - 1)^2, differentiable w.r.t. D's params
  double mean_norm = 0;
};
/// x_hat = (1-u)·real.candidate + u·fake.candidate, u per sample (B,1,1,1);
/// prototype and reference slots come from `real`.
PenaltyResult gradient_penalty(const Critic& D, const Triple& real, const Triple& fake,
                               const Tensor& u, InputGradMode mode = InputGradMode::exact);
PenaltyResult gradient_penalty(const CriticFn& D, const Triple& real, const Triple& fake,
                               const Tensor& u, InputGradMode mode = InputGradMode::exact);

/// -[mean log C(i|real) + mean log C(i|fake)]; styles are 1-based.
Tensor ac_loss(const Tensor& logits_real, const Tensor& logits_fake, const std::vector<int>& styles);
/// Softmax cross-entropy of one logits batch, 0-based labels.
Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels);

struct ConstLosses {
  Tensor content;  // ||Enc_p(prototypes) - Enc_p(generated x M)||^2
  Tensor style;    // ||Enc_r(references) - Enc_r({generated})||^2
};
/// Squared L2 of terminal features, summed over features and averaged
/// over the batch. `pass` holds the encodings of the inputs.
ConstLosses const_losses(Generator& G, const GeneratorPass& pass, const Tensor& generated,
                         bool training);
/// ||a - b||^2 per sample, batch mean.
Tensor squared_distance(const Tensor& a, const Tensor& b);

Tensor pixel_l1(const Tensor& generated, const Tensor& target);

inline constexpr double kVnRidge = 1e-4;
/// Raw divergence tr(A log A - A log B - A + B) per sample of (N,1,C,C)
/// symmetric positive definite inputs, averaged over N.
Tensor von_neumann_raw(const Tensor& A, const Tensor& B);
/// Ridge (kVnRidge·I) and unit-trace normalization, then the raw divergence.
Tensor von_neumann_div(const Tensor& A, const Tensor& B);

struct Perceptors {
  const Classifier* real = nullptr;
  const Classifier* content = nullptr;
  const Classifier* style = nullptr;
};

struct PerceptualTerms {
  Tensor real, content, style, total;
  std::map<std::string, double> per_tap;  // "real/phi1-2" etc.
};
/// MSE + w_vn·vN divergence of channel covariances per tap. Reference-side
/// features carry no gradient.
PerceptualTerms perceptual_total(const Perceptors& phi, const Tensor& generated, const Tensor& target,
                                 const Tensor& content_probe, const Tensor& style_probe,
                                 const LossWeights& w);

/// Scalar values of every term of one training step.
struct LossReport {
  long step = 0;
  double adv_g = 0, adv_d = 0, gp = 0, grad_norm = 0;
  double ac_g = 0, ac_d = 0;
  double pixel = 0;
  double phi_real = 0, phi_content = 0, phi_style = 0, phi_total = 0;
  double const_p = 0, const_r = 0;
  double total_g = 0, total_d = 0;

  static std::string csv_header();
  std::string csv_row() const;
};

struct GeneratorTerms {
  Tensor adv_g, ac, pixel, phi_total, const_p, const_r;
};
struct CriticTerms {
  Tensor adv_d, gp, ac;
};
Tensor total_G(const GeneratorTerms& t, const LossWeights& w);
Tensor total_D(const CriticTerms& t, const LossWeights& w);

}  // namespace gwnet
