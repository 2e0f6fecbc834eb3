#include "gwnet/losses.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <iomanip>
#include <sstream>

#include "gwnet/ops.hpp"

namespace gwnet {

void LossWeights::validate() const {
  auto check = [](double v, const char* name) {
    if (!(v >= 0) || !std::isfinite(v)) {
      throw std::invalid_argument(std::string("loss weight '") + name + "' must be a finite value >= 0");
    }
  };
  check(alpha, "alpha");
  check(alpha_gp, "alpha_gp");
  check(beta, "beta");
  check(lambda_pixel, "lambda_pixel");
  check(psi_p, "psi_p");
  check(psi_r, "psi_r");
  check(w_vn, "w_vn");
  for (double v : w_real) check(v, "w_real");
  for (double v : w_content) check(v, "w_content");
  for (double v : w_style) check(v, "w_style");
}

namespace {

template <std::size_t K>
std::string join(const std::array<double, K>& a) {
  std::ostringstream ss;
  ss << std::setprecision(17);
  for (std::size_t i = 0; i < K; ++i) ss << (i ? "," : "") << a[i];
  return ss.str();
}

std::string num(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

double parse_double(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("'" + key + "': expected a number, got '" + s + "'");
  }
}

template <std::size_t K>
std::array<double, K> parse_list(const std::string& key, const std::string& s) {
  std::array<double, K> out{};
  std::stringstream ss(s);
  std::string tok;
  std::size_t k = 0;
  while (std::getline(ss, tok, ',')) {
    if (k == K) break;
    out[k++] = parse_double(key, tok);
  }
  if (k != K || std::getline(ss, tok, ',')) {
    throw std::invalid_argument("'" + key + "': expected " + std::to_string(K) + " comma-separated numbers");
  }
  return out;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> LossWeights::to_kv() const {
  return {{"alpha", num(alpha)},           {"alpha_gp", num(alpha_gp)},
          {"beta", num(beta)},             {"lambda_pixel", num(lambda_pixel)},
          {"psi_p", num(psi_p)},           {"psi_r", num(psi_r)},
          {"w_real", join(w_real)},        {"w_content", join(w_content)},
          {"w_style", join(w_style)},      {"w_vn", num(w_vn)}};
}

LossWeights LossWeights::from_kv(const std::map<std::string, std::string>& kv) {
  LossWeights w;
  auto scalar = [&](const char* key, double& dst) {
    auto it = kv.find(key);
    if (it != kv.end()) dst = parse_double(key, it->second);
  };
  scalar("alpha", w.alpha);
  scalar("alpha_gp", w.alpha_gp);
  scalar("beta", w.beta);
  scalar("lambda_pixel", w.lambda_pixel);
  scalar("psi_p", w.psi_p);
  scalar("psi_r", w.psi_r);
  scalar("w_vn", w.w_vn);
  if (kv.count("w_real")) w.w_real = parse_list<5>("w_real", kv.at("w_real"));
  if (kv.count("w_content")) w.w_content = parse_list<2>("w_content", kv.at("w_content"));
  if (kv.count("w_style")) w.w_style = parse_list<2>("w_style", kv.at("w_style"));
  w.validate();
  return w;
}

namespace {

CriticFn critic_fn(const Critic& D) {
  return [&D](const Tensor& p, const Tensor& c, const Tensor& r) { return D.discriminate(p, c, r).critic; };
}

}  // namespace

AdvLosses adv_losses(const CriticFn& D, const Triple& real, const Triple& fake) {
  Tensor d_real = mean(D(real.prototype, real.candidate, real.reference), kAll);
  Tensor d_fake = mean(D(fake.prototype, fake.candidate, fake.reference), kAll);
  return {d_fake, sub(d_fake, d_real)};
}

AdvLosses adv_losses(const Critic& D, const Triple& real, const Triple& fake) {
  return adv_losses(critic_fn(D), real, fake);
}

PenaltyResult gradient_penalty(const CriticFn& D, const Triple& real, const Triple& fake,
                               const Tensor& u, InputGradMode mode) {
  Tensor x_hat = interpolate_uniform(real.candidate, fake.candidate, u);
  auto critic_sum = [&](const Tensor& x) { return sum_all(D(real.prototype, x, real.reference)); };
  // Samples do not interact inside D, so the gradient of the batch sum
  // holds every per-sample input gradient.
  Tensor g = input_gradient(critic_sum, x_hat, mode);
  Tensor norms = sqrt(add_scalar(sum(mul(g, g), kC | kH | kW), 1e-12));
  Tensor dev = add_scalar(norms, -1.0);
  PenaltyResult r;
  r.penalty = mean(mul(dev, dev), kAll);
  for (double v : norms.data()) r.mean_norm += v;
  r.mean_norm /= static_cast<double>(norms.numel());
  return r;
}

PenaltyResult gradient_penalty(const Critic& D, const Triple& real, const Triple& fake,
                               const Tensor& u, InputGradMode mode) {
  return gradient_penalty(critic_fn(D), real, fake, u, mode);
}

Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels) {
  const Shape& s = logits.shape();
  if (s.h != 1 || s.w != 1 || static_cast<int>(labels.size()) != s.n) {
    throw ShapeError("cross_entropy: logits " + s.str() + " vs " + std::to_string(labels.size()) + " labels");
  }
  std::vector<double> onehot(s.numel(), 0.0);
  for (int n = 0; n < s.n; ++n) {
    if (labels[n] < 0 || labels[n] >= s.c) {
      throw std::invalid_argument("cross_entropy: class index " + std::to_string(labels[n]) +
                                  " outside [0, " + std::to_string(s.c) + ")");
    }
    onehot[std::size_t(n) * s.c + labels[n]] = 1.0;
  }
  return scale(sum_all(mul(log_softmax(logits), Tensor(s, std::move(onehot)))), -1.0 / s.n);
}

Tensor ac_loss(const Tensor& logits_real, const Tensor& logits_fake, const std::vector<int>& styles) {
  std::vector<int> labels;
  for (int i : styles) {
    if (i < 1 || i > logits_real.shape().c) {
      throw std::invalid_argument("ac_loss: style " + std::to_string(i) + " outside 1.." +
                                  std::to_string(logits_real.shape().c));
    }
    labels.push_back(i - 1);
  }
  return add(cross_entropy_loss(logits_real, labels), cross_entropy_loss(logits_fake, labels));
}

Tensor squared_distance(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("squared_distance: " + a.shape().str() + " vs " + b.shape().str());
  }
  Tensor d = sub(a, b);
  return scale(sum_all(mul(d, d)), 1.0 / a.shape().n);
}

ConstLosses const_losses(Generator& G, const GeneratorPass& pass, const Tensor& generated,
                         bool training) {
  const int M = G.config().M;
  std::vector<Tensor> copies(M, generated);
  Tensor probe_p = concat(std::span<const Tensor>(copies), 1);
  EncoderFeatures gp = G.encode_content(probe_p, training);
  EncoderFeatures gr = G.encode_style(generated, 1, training);
  return {squared_distance(pass.content.terminal(), gp.terminal()),
          squared_distance(pass.style.terminal(), gr.terminal())};
}

Tensor pixel_l1(const Tensor& generated, const Tensor& target) {
  if (!(generated.shape() == target.shape())) {
    throw ShapeError("pixel_l1: " + generated.shape().str() + " vs " + target.shape().str());
  }
  return mean(abs(sub(generated, target)), kAll);
}

// ------------------------------------------------------------ von Neumann

namespace {

using Mat = Eigen::MatrixXd;

Mat matrix_at(std::span<const double> d, int n, int C) {
  Mat m(C, C);
  for (int i = 0; i < C; ++i)
    for (int j = 0; j < C; ++j) m(i, j) = d[(std::size_t(n) * C + i) * C + j];
  return m;
}

void check_symmetric(const Mat& m, const char* which) {
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
    throw std::invalid_argument(std::string("von_neumann_div: ") + which + " is not symmetric");
  }
}

struct Eig {
  Eigen::VectorXd values;
  Mat vectors;
};

Eig eig(const Mat& m, const char* which) {
  Eigen::SelfAdjointEigenSolver<Mat> es(m);
  if (es.info() != Eigen::Success) throw NumericError(std::string("von_neumann_div: eigensolve failed on ") + which);
  if (es.eigenvalues().minCoeff() <= 0) {
    throw NumericError(std::string("von_neumann_div: ") + which + " is not positive definite");
  }
  return {es.eigenvalues(), es.eigenvectors()};
}

Mat logm(const Eig& e) {
  return e.vectors * e.values.array().log().matrix().asDiagonal() * e.vectors.transpose();
}

// d/dB tr(A log B) = U (U^T A U ∘ K) U^T with the divided differences of log.
Mat dtr_a_logb(const Mat& A, const Eig& b) {
  const int C = static_cast<int>(b.values.size());
  Mat K(C, C);
  for (int i = 0; i < C; ++i)
    for (int j = 0; j < C; ++j) {
      const double li = b.values(i), lj = b.values(j);
      K(i, j) = std::fabs(li - lj) > 1e-12 * std::max(li, lj) ? (std::log(li) - std::log(lj)) / (li - lj)
                                                                : 1.0 / (0.5 * (li + lj));
    }
  Mat At = b.vectors.transpose() * A * b.vectors;
  return b.vectors * At.cwiseProduct(K) * b.vectors.transpose();
}

}  // namespace

Tensor von_neumann_raw(const Tensor& A, const Tensor& B) {
  const Shape& s = A.shape();
  if (!(s == B.shape()) || s.c != 1 || s.h != s.w) {
    throw ShapeError("von_neumann_div: expected matching (N,1,C,C) inputs, got " + s.str() + " and " +
                     B.shape().str());
  }
  const int N = s.n, C = s.h;
  double total = 0;
  std::vector<double> ga(s.numel()), gb(s.numel());
  for (int n = 0; n < N; ++n) {
    Mat a = matrix_at(A.data(), n, C), b = matrix_at(B.data(), n, C);
    check_symmetric(a, "A");
    check_symmetric(b, "B");
    Eig ea = eig(a, "A"), eb = eig(b, "B");
    Mat la = logm(ea), lb = logm(eb);
    total += (a * la - a * lb - a + b).trace();
    Mat dA = la - lb;
    Mat dB = Mat::Identity(C, C) - dtr_a_logb(a, eb);
    for (int i = 0; i < C; ++i)
      for (int j = 0; j < C; ++j) {
        ga[(std::size_t(n) * C + i) * C + j] = dA(i, j) / N;
        gb[(std::size_t(n) * C + i) * C + j] = dB(i, j) / N;
      }
  }
  Tensor grad_a(s, std::move(ga)), grad_b(s, std::move(gb));
  return make_result(
      Shape{}, {total / N}, "von_neumann_div", {A, B},
      [grad_a, grad_b](const Tensor& go, std::span<const bool> needs,
                       const std::vector<Tensor>&) -> std::vector<Tensor> {
        std::vector<Tensor> gr(2);
        const double g = go.item();
        if (needs[0]) gr[0] = scale(grad_a, g);
        if (needs[1]) gr[1] = scale(grad_b, g);
        return gr;
      },
      /*higher_order=*/false);
}

namespace {

Tensor ridge_normalize(const Tensor& X) {
  const Shape& s = X.shape();
  const int C = s.h;
  std::vector<double> eye(std::size_t(C) * C, 0.0);
  for (int i = 0; i < C; ++i) eye[std::size_t(i) * C + i] = 1.0;
  Tensor I(Shape{1, 1, C, C}, std::move(eye));
  Tensor ridged = add(X, scale(I, kVnRidge));
  Tensor trace = sum(mul(ridged, I), kH | kW);  // (N,1,1,1)
  return div(ridged, trace);
}

}  // namespace

Tensor von_neumann_div(const Tensor& A, const Tensor& B) {
  return von_neumann_raw(ridge_normalize(A), ridge_normalize(B));
}

// ------------------------------------------------------------ perceptual

namespace {

Tensor tap_term(const Tensor& gen, const Tensor& ref, double w_vn) {
  Tensor d = sub(gen, ref);
  Tensor term = mean(mul(d, d), kAll);
  if (w_vn > 0) {
    term = add(term, scale(von_neumann_div(channel_covariance(gen), channel_covariance(ref)), w_vn));
  }
  return term;
}

template <std::size_t K>
Tensor network_term(const Classifier& net, const std::vector<std::string>& taps,
                    const std::array<double, K>& weights, const Tensor& generated, const Tensor& ref,
                    double w_vn, const char* label, std::map<std::string, double>& per_tap) {
  std::map<std::string, Tensor> ref_feats;
  {
    NoGradGuard frozen;
    ref_feats = net.extract_features(ref, taps);
  }
  std::map<std::string, Tensor> gen_feats = net.extract_features(generated, taps);
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t k = 0; k < K; ++k) {
    if (!gen_feats.count(taps[k])) throw std::invalid_argument(std::string("perceptual: missing tap ") + taps[k]);
    Tensor t = tap_term(gen_feats.at(taps[k]), ref_feats.at(taps[k]), w_vn);
    per_tap[std::string(label) + "/" + taps[k]] = t.item();
    total = add(total, scale(t, weights[k]));
  }
  return total;
}

}  // namespace

PerceptualTerms perceptual_total(const Perceptors& phi, const Tensor& generated, const Tensor& target,
                                 const Tensor& content_probe, const Tensor& style_probe,
                                 const LossWeights& w) {
  PerceptualTerms out;
  const std::vector<std::string> deep{"phi4-3", "phi5-3"};
  out.real = phi.real ? network_term(*phi.real, tap_names(), w.w_real, generated, target, w.w_vn, "real", out.per_tap)
                      : Tensor::scalar(0.0);
  out.content = phi.content ? network_term(*phi.content, deep, w.w_content, generated, content_probe, w.w_vn,
                                           "content", out.per_tap)
                            : Tensor::scalar(0.0);
  out.style = phi.style ? network_term(*phi.style, deep, w.w_style, generated, style_probe, w.w_vn, "style",
                                       out.per_tap)
                        : Tensor::scalar(0.0);
  out.total = add(add(out.real, out.content), out.style);
  return out;
}

// ------------------------------------------------------------ totals

Tensor total_G(const GeneratorTerms& t, const LossWeights& w) {
  Tensor g = scale(t.adv_g, -w.alpha);
  g = add(g, scale(t.ac, w.beta));
  g = add(g, scale(t.pixel, w.lambda_pixel));
  g = add(g, t.phi_total);
  g = add(g, scale(t.const_p, w.psi_p));
  g = add(g, scale(t.const_r, w.psi_r));
  return g;
}

Tensor total_D(const CriticTerms& t, const LossWeights& w) {
  return add(add(scale(t.adv_d, w.alpha), scale(t.gp, w.alpha_gp)), scale(t.ac, w.beta));
}

std::string LossReport::csv_header() {
  return "step,adv_g,adv_d,gp,grad_norm,ac_g,ac_d,pixel,phi_real,phi_content,phi_style,phi_total,"
         "const_p,const_r,total_g,total_d";
}

std::string LossReport::csv_row() const {
  std::ostringstream ss;
  ss << step << std::setprecision(17);
  for (double v : {adv_g, adv_d, gp, grad_norm, ac_g, ac_d, pixel, phi_real, phi_content, phi_style,
                   phi_total, const_p, const_r, total_g, total_d}) {
    ss << ',' << v;
  }
  return ss.str();
}

}  // namespace gwnet
