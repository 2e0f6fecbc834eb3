#include <cmath>

#include "doctest.h"
#include "gwnet/losses.hpp"
#include "gwnet/ops.hpp"
#include "test_util.hpp"

using namespace gwnet;
using gwnet::testing::max_abs_diff;
using gwnet::testing::random_tensor;

namespace {

// Builds a (1,1,C,C) tensor from a row-major matrix.
Tensor matrix(int C, std::vector<double> v) { return Tensor(Shape{1, 1, C, C}, std::move(v)); }

Tensor random_spd(int C, std::uint64_t seed) {
  Tensor f = random_tensor(Shape{1, C, 4, 4}, seed);
  NoGradGuard ng;
  return channel_covariance(f);
}

// Critic score sum(w_c ⊙ candidate) + sum(w_p ⊙ p) + sum(w_r ⊙ r) per sample.
struct LinearCritic {
  Tensor wp, wc, wr;
  Tensor operator()(const Tensor& p, const Tensor& c, const Tensor& r) const {
    Tensor s = add(add(mul(p, wp), mul(c, wc)), mul(r, wr));
    return sum(s, kCHW);
  }
};

LinearCritic linear_critic(Shape one, double norm_c, std::uint64_t seed) {
  Tensor wc = random_tensor(one, seed);
  double n = 0;
  for (double v : wc.data()) n += v * v;
  wc = scale(wc, norm_c / std::sqrt(n));
  return {random_tensor(one, seed + 1), wc, random_tensor(one, seed + 2)};
}

Triple random_triple(Shape s, std::uint64_t seed) {
  return {random_tensor(s, seed), random_tensor(s, seed + 10), random_tensor(s, seed + 20)};
}

WNetConfig tiny_wnet() {
  WNetConfig cfg = WNetConfig::defaults(32).reduced(128);
  cfg.I = 3;
  return cfg;
}

ClassifierConfig tiny_classifier() {
  ClassifierConfig c;
  c.size = 32;
  c.J = 4;
  c.I = 3;
  c.widths = {2, 2, 3, 3, 3};
  c.convs = {1, 1, 1, 1, 1};
  return c;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

}  // namespace

TEST_SUITE("adversarial") {
  TEST_CASE("zero-weight critic gives zero losses") {
    Critic D(tiny_wnet(), 3);
    for (Tensor t : D.params().params()) std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
    Shape s{2, 1, 32, 32};
    AdvLosses l = adv_losses(D, random_triple(s, 1), random_triple(s, 2));
    CHECK(l.adv_g.item() == 0.0);
    CHECK(l.adv_d.item() == 0.0);
  }

  TEST_CASE("identical triples cancel in the critic loss") {
    Critic D(tiny_wnet(), 3);
    Triple t = random_triple(Shape{2, 1, 32, 32}, 4);
    CHECK(adv_losses(D, t, t).adv_d.item() == 0.0);
  }

  TEST_CASE("linear critic matches inner products") {
    Shape s{3, 1, 8, 8};
    LinearCritic lc = linear_critic(Shape{1, 1, 8, 8}, 2.0, 7);
    Triple real = random_triple(s, 11), fake = random_triple(s, 12);
    AdvLosses l = adv_losses(CriticFn(lc), real, fake);
    auto score = [&](const Triple& t) {
      double acc = 0;
      for (int n = 0; n < 3; ++n) {
        acc += dot(narrow(t.prototype, 0, n, 1), lc.wp) + dot(narrow(t.candidate, 0, n, 1), lc.wc) +
               dot(narrow(t.reference, 0, n, 1), lc.wr);
      }
      return acc / 3;
    };
    CHECK(l.adv_g.item() == doctest::Approx(score(fake)).epsilon(1e-12));
    CHECK(l.adv_d.item() == doctest::Approx(score(fake) - score(real)).epsilon(1e-12));
  }
}

TEST_SUITE("gradient penalty") {
  TEST_CASE("unit-norm linear critic has zero penalty for every u") {
    Shape s{3, 1, 8, 8};
    LinearCritic lc = linear_critic(Shape{1, 1, 8, 8}, 1.0, 21);
    for (double u : {0.0, 0.3, 1.0}) {
      PenaltyResult p = gradient_penalty(CriticFn(lc), random_triple(s, 1), random_triple(s, 2),
                                         Tensor(Shape{3, 1, 1, 1}, u));
      CHECK(p.penalty.item() == doctest::Approx(0.0).epsilon(1e-12).scale(1));
      CHECK(p.mean_norm == doctest::Approx(1.0).epsilon(1e-10));
    }
  }

  TEST_CASE("linear critic with gradient norm 3 has penalty 4") {
    Shape s{2, 1, 8, 8};
    LinearCritic lc = linear_critic(Shape{1, 1, 8, 8}, 3.0, 22);
    PenaltyResult p = gradient_penalty(CriticFn(lc), random_triple(s, 3), random_triple(s, 4),
                                       random_tensor(Shape{2, 1, 1, 1}, 5, 0, 1));
    CHECK(p.penalty.item() == doctest::Approx(4.0).epsilon(1e-10));
  }

  TEST_CASE("u = 0 evaluates at the real candidate") {
    Critic D(tiny_wnet(), 8);
    Shape s{2, 1, 32, 32};
    Triple real = random_triple(s, 30), fake = random_triple(s, 31);
    PenaltyResult p = gradient_penalty(D, real, fake, Tensor(Shape{2, 1, 1, 1}, 0.0));
    Tensor g = input_gradient(
        [&](const Tensor& x) { return sum_all(D.discriminate(real.prototype, x, real.reference).critic); },
        real.candidate);
    double expect = 0;
    for (int n = 0; n < 2; ++n) {
      Tensor gn = narrow(g, 0, n, 1);
      double norm = std::sqrt(dot(gn, gn) + 1e-12);
      expect += (norm - 1) * (norm - 1) / 2;
    }
    CHECK(p.penalty.item() == doctest::Approx(expect).epsilon(1e-12));
  }

  TEST_CASE("double-backward penalty gradient passes the finite-difference check") {
    WNetConfig cfg = tiny_wnet();
    cfg.critic_widths = {2, 2, 2, 2, 2};
    Critic D(cfg, 9);
    Shape s{2, 1, 32, 32};
    Triple real = random_triple(s, 40), fake = random_triple(s, 41);
    Tensor u = random_tensor(Shape{2, 1, 1, 1}, 42, 0, 1);
    auto f = [&](const std::vector<Tensor>& ps) {
      std::vector<Tensor> saved = D.params().rebind(ps);
      Tensor pen = gradient_penalty(D, real, fake, u).penalty;
      D.params().rebind(saved);
      return pen;
    };
    GradCheckReport r = grad_check_report(f, D.params().params());
    INFO("worst analytic " << r.analytic << " numeric " << r.numeric);
    CHECK(r.max_rel_error < 1e-3);
  }

  TEST_CASE("finite-difference input gradient agrees with the exact one") {
    Shape s{2, 1, 4, 4};
    Tensor wc = random_tensor(Shape{1, 1, 4, 4}, 50);
    // Nonlinear in the candidate so the difference scheme has work to do.
    CriticFn D = [&](const Tensor& p, const Tensor& c, const Tensor& r) {
      return sum(add(mul(tanh(mul(c, wc)), p), r), kCHW);
    };
    Triple real = random_triple(s, 51), fake = random_triple(s, 52);
    Tensor u = random_tensor(Shape{2, 1, 1, 1}, 53, 0, 1);
    double exact = gradient_penalty(D, real, fake, u, InputGradMode::exact).penalty.item();
    double fd = gradient_penalty(D, real, fake, u, InputGradMode::finite_difference).penalty.item();
    CHECK(fd == doctest::Approx(exact).epsilon(1e-5));
  }
}

TEST_SUITE("auxiliary classifier loss") {
  TEST_CASE("uniform logits over four styles give 2 ln 4") {
    Tensor z(Shape{3, 4, 1, 1}, 0.7);
    CHECK(ac_loss(z, z, {1, 2, 4}).item() == doctest::Approx(2 * std::log(4.0)).epsilon(1e-14));
  }

  TEST_CASE("all mass on the true style drives the loss to zero") {
    Tensor z(Shape{1, 4, 1, 1}, {0, 0, 60, 0});
    CHECK(ac_loss(z, z, {3}).item() < 1e-20);
  }

  TEST_CASE("swapping real and fake logits leaves the value unchanged") {
    Tensor a = random_tensor(Shape{3, 5, 1, 1}, 60, -3, 3);
    Tensor b = random_tensor(Shape{3, 5, 1, 1}, 61, -3, 3);
    CHECK(ac_loss(a, b, {1, 5, 2}).item() == doctest::Approx(ac_loss(b, a, {1, 5, 2}).item()).epsilon(1e-15));
  }

  TEST_CASE("invalid style index is rejected") {
    Tensor z(Shape{1, 4, 1, 1}, 0.0);
    CHECK_THROWS_AS(ac_loss(z, z, {0}), std::invalid_argument);
    CHECK_THROWS_AS(ac_loss(z, z, {5}), std::invalid_argument);
  }

  TEST_CASE("gradient check") {
    std::vector<int> styles{2, 1};
    auto f = [&](const std::vector<Tensor>& x) { return ac_loss(x[0], x[1], styles); };
    CHECK(grad_check(f, {random_tensor(Shape{2, 3, 1, 1}, 62), random_tensor(Shape{2, 3, 1, 1}, 63)}) < 1e-6);
  }
}

TEST_SUITE("pixel and constant losses") {
  TEST_CASE("pixel L1 endpoints and oracle") {
    Shape s{2, 1, 8, 8};
    CHECK(pixel_l1(Tensor(s, 1.0), Tensor(s, -1.0)).item() == 2.0);
    Tensor a = random_tensor(s, 70), b = random_tensor(s, 71);
    CHECK(pixel_l1(a, a).item() == 0.0);
    double oracle = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) oracle += std::fabs(a.data()[i] - b.data()[i]);
    CHECK(pixel_l1(a, b).item() == doctest::Approx(oracle / a.numel()).epsilon(1e-14));
    CHECK_THROWS_AS(pixel_l1(a, Tensor(Shape{2, 1, 4, 4})), ShapeError);
  }

  TEST_CASE("squared distance oracle and homogeneity") {
    Shape s{3, 6, 1, 1};
    Tensor a = random_tensor(s, 72), b = random_tensor(s, 73);
    double oracle = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) oracle += std::pow(a.data()[i] - b.data()[i], 2);
    double d = squared_distance(a, b).item();
    CHECK(d == doctest::Approx(oracle / 3).epsilon(1e-14));
    Tensor b2 = sub(a, scale(sub(a, b), 2.0));
    CHECK(squared_distance(a, b2).item() == doctest::Approx(4 * d).epsilon(1e-12));
  }

  TEST_CASE("identity probes give zero constant losses") {
    for (MixerVariant v : {MixerVariant::bn, MixerVariant::adain}) {
      WNetConfig cfg = tiny_wnet();
      cfg.mixer.variant = v;
      Generator G(cfg, 5);
      Tensor glyph = random_tensor(Shape{2, 1, 32, 32}, 80);
      Tensor protos = concat({glyph, glyph, glyph}, 1);
      GeneratorPass pass = G.forward(protos, glyph, 1, false);
      ConstLosses c = const_losses(G, pass, glyph, false);
      CHECK(c.content.item() == 0.0);
      CHECK(c.style.item() == 0.0);
    }
  }
}

TEST_SUITE("von Neumann divergence") {
  TEST_CASE("zero on identical inputs and non-negative otherwise") {
    Tensor A = random_spd(4, 90), B = random_spd(4, 91);
    CHECK(std::fabs(von_neumann_div(A, A).item()) < 1e-12);
    CHECK(von_neumann_div(A, B).item() > 0);
  }

  TEST_CASE("diagonal inputs match the scalar formula") {
    Tensor A = matrix(2, {2.0 / 3, 0, 0, 1.0 / 3});
    Tensor B = matrix(2, {0.5, 0, 0, 0.5});
    auto oracle = [](std::vector<double> a, std::vector<double> b) {
      double s = 0;
      for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * std::log(a[i]) - a[i] * std::log(b[i]) - a[i] + b[i];
      return s;
    };
    CHECK(von_neumann_raw(A, B).item() == doctest::Approx(oracle({2.0 / 3, 1.0 / 3}, {0.5, 0.5})).epsilon(1e-13));
    // With the ridge the inputs become (a + eps) / (1 + 2 eps).
    const double e = kVnRidge, t = 1 + 2 * e;
    CHECK(von_neumann_div(A, B).item() ==
          doctest::Approx(oracle({(2.0 / 3 + e) / t, (1.0 / 3 + e) / t}, {0.5, 0.5})).epsilon(1e-12));
  }

  TEST_CASE("the divergence is asymmetric") {
    Tensor A = random_spd(3, 92), B = random_spd(3, 93);
    CHECK(std::fabs(von_neumann_div(A, B).item() - von_neumann_div(B, A).item()) > 1e-6);
  }

  TEST_CASE("non-symmetric input is rejected") {
    Tensor A = matrix(2, {1, 0.5, 0, 1});
    Tensor B = matrix(2, {1, 0, 0, 1});
    CHECK_THROWS_AS(von_neumann_div(A, B), std::invalid_argument);
    CHECK_THROWS_AS(von_neumann_div(B, A), std::invalid_argument);
  }

  TEST_CASE("gradient check through covariances on both arguments") {
    auto f = [](const std::vector<Tensor>& x) {
      return von_neumann_div(channel_covariance(x[0]), channel_covariance(x[1]));
    };
    GradCheckReport r = grad_check_report(
        f, {random_tensor(Shape{2, 3, 3, 3}, 94), random_tensor(Shape{2, 3, 3, 3}, 95)});
    INFO("worst analytic " << r.analytic << " numeric " << r.numeric);
    CHECK(r.max_rel_error < 1e-4);
  }

  TEST_CASE("gradient check with repeated eigenvalues") {
    // B = I/2 exercises the equal-eigenvalue branch of the divided differences.
    Tensor B = matrix(2, {0.5, 0, 0, 0.5});
    auto f = [&](const std::vector<Tensor>& x) { return von_neumann_div(B, channel_covariance(x[0])); };
    Tensor x = random_tensor(Shape{1, 2, 3, 3}, 96);
    CHECK(grad_check(f, {x}) < 1e-4);
  }
}

TEST_SUITE("perceptual") {
  TEST_CASE("identical images give a zero real term") {
    Classifier phi(tiny_classifier(), 1);
    Tensor x = random_tensor(Shape{2, 1, 32, 32}, 100);
    PerceptualTerms t = perceptual_total({&phi, nullptr, nullptr}, x, x, x, x, LossWeights{});
    CHECK(std::fabs(t.real.item()) < 1e-12);
  }

  TEST_CASE("without the divergence each tap is a feature MSE") {
    Classifier phi(tiny_classifier(), 2);
    Tensor gen = random_tensor(Shape{2, 1, 32, 32}, 101);
    Tensor tgt = random_tensor(Shape{2, 1, 32, 32}, 102);
    LossWeights w;
    w.w_vn = 0;
    w.w_real = {1, 2, 3, 4, 5};
    PerceptualTerms t = perceptual_total({&phi, nullptr, nullptr}, gen, tgt, tgt, tgt, w);
    auto fg = phi.extract_features(gen, tap_names());
    auto ft = phi.extract_features(tgt, tap_names());
    double oracle = 0;
    for (std::size_t k = 0; k < 5; ++k) {
      const Tensor& a = fg.at(tap_names()[k]);
      const Tensor& b = ft.at(tap_names()[k]);
      double mse = 0;
      for (std::size_t i = 0; i < a.numel(); ++i) mse += std::pow(a.data()[i] - b.data()[i], 2);
      oracle += w.w_real[k] * mse / a.numel();
    }
    CHECK(t.real.item() == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(t.total.item() == doctest::Approx(oracle).epsilon(1e-12));
  }

  TEST_CASE("content and style terms only read the two deepest taps") {
    Classifier phi(tiny_classifier(), 3);
    Tensor gen = random_tensor(Shape{1, 1, 32, 32}, 103);
    Tensor probe = random_tensor(Shape{1, 1, 32, 32}, 104);
    LossWeights w;
    PerceptualTerms a = perceptual_total({&phi, &phi, &phi}, gen, probe, probe, probe, w);
    w.w_real = {9, 9, 9, 1, 1};
    PerceptualTerms b = perceptual_total({&phi, &phi, &phi}, gen, probe, probe, probe, w);
    CHECK(a.content.item() == b.content.item());
    CHECK(a.style.item() == b.style.item());
    for (const char* k : {"content/phi1-2", "content/phi2-2", "content/phi3-3", "style/phi1-2", "style/phi3-3"}) {
      CHECK(a.per_tap.count(k) == 0);
    }
    CHECK(a.per_tap.count("content/phi5-3") == 1);
    CHECK(a.per_tap.count("real/phi1-2") == 1);
  }

  TEST_CASE("gradient check with respect to the generated image") {
    Classifier phi(tiny_classifier(), 4);
    Tensor tgt = random_tensor(Shape{1, 1, 32, 32}, 105);
    auto f = [&](const std::vector<Tensor>& x) {
      return perceptual_total({&phi, &phi, &phi}, x[0], tgt, tgt, tgt, LossWeights{}).total;
    };
    GradCheckReport r = grad_check_report(f, {random_tensor(Shape{1, 1, 32, 32}, 106)});
    INFO("worst analytic " << r.analytic << " numeric " << r.numeric);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_SUITE("totals") {
  GeneratorTerms random_g_terms(std::uint64_t seed) {
    Tensor v = random_tensor(Shape{1, 6, 1, 1}, seed, 0.1, 2);
    auto s = [&](int k) { return Tensor::scalar(v.data()[k]); };
    return {s(0), s(1), s(2), s(3), s(4), s(5)};
  }

  TEST_CASE("only the pixel weight set") {
    GeneratorTerms t = random_g_terms(110);
    LossWeights w;
    w.alpha = w.beta = w.psi_p = w.psi_r = 0;
    w.lambda_pixel = 50;
    // phi_total enters unweighted; zero it for this case.
    t.phi_total = Tensor::scalar(0);
    CHECK(total_G(t, w).item() == 50 * t.pixel.item());
  }

  TEST_CASE("doubling alpha doubles the adversarial part") {
    GeneratorTerms t = random_g_terms(111);
    LossWeights w;
    double base = total_G(t, w).item();
    w.alpha = 2;
    CHECK(total_G(t, w).item() - base == doctest::Approx(-t.adv_g.item()).epsilon(1e-13));
    CriticTerms c{Tensor::scalar(0.4), Tensor::scalar(0.2), Tensor::scalar(1.1)};
    LossWeights w1;
    double d1 = total_D(c, w1).item();
    w1.alpha = 2;
    CHECK(total_D(c, w1).item() - d1 == doctest::Approx(0.4).epsilon(1e-13));
  }

  TEST_CASE("re-summation oracle") {
    GeneratorTerms t = random_g_terms(112);
    LossWeights w;
    w.alpha = 0.7;
    w.beta = 1.3;
    w.lambda_pixel = 20;
    w.psi_p = 0.25;
    w.psi_r = 3;
    double oracle = -0.7 * t.adv_g.item() + 1.3 * t.ac.item() + 20 * t.pixel.item() + t.phi_total.item() +
                    0.25 * t.const_p.item() + 3 * t.const_r.item();
    CHECK(total_G(t, w).item() == doctest::Approx(oracle).epsilon(1e-14));
    CriticTerms c{Tensor::scalar(-0.4), Tensor::scalar(0.3), Tensor::scalar(1.7)};
    w.alpha_gp = 10;
    CHECK(total_D(c, w).item() == doctest::Approx(0.7 * -0.4 + 10 * 0.3 + 1.3 * 1.7).epsilon(1e-14));
  }
}

TEST_SUITE("loss weights") {
  TEST_CASE("key-value round trip and validation") {
    LossWeights w;
    w.alpha_gp = 7.5;
    w.w_style = {0.25, 4};
    std::map<std::string, std::string> kv;
    for (auto& [k, v] : w.to_kv()) kv[k] = v;
    LossWeights r = LossWeights::from_kv(kv);
    CHECK(r.alpha_gp == 7.5);
    CHECK(r.w_style[1] == 4);
    kv["beta"] = "-1";
    CHECK_THROWS_AS(LossWeights::from_kv(kv), std::invalid_argument);
    kv["beta"] = "1";
    kv["w_real"] = "1,2";
    CHECK_THROWS_AS(LossWeights::from_kv(kv), std::invalid_argument);
  }

  TEST_CASE("report row has one value per header column") {
    LossReport r;
    r.step = 3;
    std::string h = LossReport::csv_header(), row = r.csv_row();
    CHECK(std::count(h.begin(), h.end(), ',') == std::count(row.begin(), row.end(), ','));
  }
}
