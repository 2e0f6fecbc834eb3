#include "gwnet/gradsuite.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <random>

#include "gwnet/gradcheck.hpp"
#include "gwnet/losses.hpp"
#include "gwnet/norm.hpp"
#include "gwnet/ops.hpp"

namespace gwnet {
namespace {

constexpr double kTol = 1e-4;
constexpr double kTolPenalty = 1e-3;

Tensor rnd(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(lo, hi);
  std::vector<double> v(s.numel());
  for (double& x : v) x = uni(rng);
  return Tensor(s, std::move(v));
}

// Magnitudes in [0.2, 1] with random signs, away from kinks at zero.
Tensor off_zero(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.2, 1.0);
  std::vector<double> v(s.numel());
  for (double& x : v) x = (rng() & 1 ? 1.0 : -1.0) * uni(rng);
  return Tensor(s, std::move(v));
}

// Distinct values, so max/min selections are stable under small steps.
Tensor distinct(Shape s, std::uint64_t seed) {
  std::vector<double> v(s.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = -1.0 + 2.0 * double(i) / double(v.size());
  std::mt19937_64 rng(seed);
  std::shuffle(v.begin(), v.end(), rng);
  return Tensor(s, std::move(v));
}

// x^2 whose backward forgets the factor 2.
Tensor broken_square(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * x.data()[i];
  return make_result(x.shape(), std::move(out), "broken_square", {x},
                     [](const Tensor& g, std::span<const bool>, const std::vector<Tensor>& in) {
                       return std::vector<Tensor>{mul(g, in[0])};
                     });
}

struct Case {
  std::string name;
  double tol;
  std::function<double()> run;
};

double check(const TensorFn& f, std::vector<Tensor> inputs, double step = 1e-5) {
  return grad_check(f, inputs, step);
}

// Checks the gradient of <∇_x g(x), r> with respect to x, i.e. that g's
// backward is itself differentiable.
double check_double(const std::function<Tensor(const Tensor&)>& g, const Tensor& x0, std::uint64_t seed) {
  Tensor r = rnd(x0.shape(), seed);
  auto f = [&](const std::vector<Tensor>& x) {
    GradModeGuard on(true);
    // The finite-difference probes arrive untracked; give them a leaf.
    Tensor xin = x[0].requires_grad() ? x[0] : x[0].detach().set_requires_grad(true);
    Tensor y = g(xin);
    Tensor gx = grad(y, {xin}, /*create_graph=*/true)[0];
    return sum_all(mul(gx, r));
  };
  return check(f, {x0});
}

// Fan-in scaled weights and small random biases, so tiny models are not
// parked next to every kink as with the 0.02 training init.
void spread_params(ParamStore& ps, std::uint64_t seed) {
  for (const std::string& name : ps.param_names()) {
    Tensor& t = ps.get(name);
    const Shape& sh = t.shape();
    const bool weight = name.size() > 2 && name.compare(name.size() - 2, 2, ".w") == 0;
    const bool bias = name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0;
    if (!weight && !bias) continue;
    const int fan = (name.rfind("dec", 0) == 0 ? sh.n : sh.c) * sh.h * sh.w;
    const double bound = weight ? std::sqrt(3.0 / fan) : 0.1;
    Tensor r = rnd(sh, seed++, -bound, bound);
    std::copy(r.data().begin(), r.data().end(), t.mutable_data().begin());
  }
}

Tensor ln_affine(const Tensor& x, NormKind kind) {
  const int C = x.shape().c;
  Tensor gamma = rnd(Shape{1, C, 1, 1}, 900, 0.5, 1.5);
  Tensor beta = rnd(Shape{1, C, 1, 1}, 901);
  return normalize(x, kind, gamma, beta);
}

std::vector<Case> build_cases(const GradSuiteOptions& opt) {
  std::vector<Case> cs;
  auto reg = [&](std::string name, double tol, std::function<double()> run) {
    cs.push_back({std::move(name), tol, std::move(run)});
  };
  const Shape s{2, 3, 4, 4};

  // Elementwise and broadcasting arithmetic.
  reg("op/add", kTol, [=] { return check([](auto& x) { return add(x[0], x[1]); }, {rnd(s, 1), rnd(Shape{1, 3, 1, 4}, 2)}); });
  reg("op/sub", kTol, [=] { return check([](auto& x) { return sub(x[0], x[1]); }, {rnd(Shape{2, 1, 4, 4}, 3), rnd(s, 4)}); });
  reg("op/mul", kTol, [=] { return check([](auto& x) { return mul(x[0], x[1]); }, {rnd(s, 5), rnd(Shape{2, 3, 1, 1}, 6)}); });
  reg("op/div", kTol, [=] { return check([](auto& x) { return div(x[0], x[1]); }, {rnd(s, 7), rnd(Shape{1, 3, 4, 4}, 8, 0.5, 2)}); });
  reg("op/neg", kTol, [=] { return check([](auto& x) { return neg(x[0]); }, {rnd(s, 9)}); });
  reg("op/scale", kTol, [=] { return check([](auto& x) { return scale(x[0], -2.5); }, {rnd(s, 10)}); });
  reg("op/add_scalar", kTol, [=] { return check([](auto& x) { return add_scalar(x[0], 0.3); }, {rnd(s, 11)}); });
  reg("op/pow_scalar", kTol, [=] { return check([](auto& x) { return pow_scalar(x[0], 2.5); }, {rnd(s, 12, 0.3, 2)}); });
  reg("op/sqrt", kTol, [=] { return check([](auto& x) { return sqrt(x[0]); }, {rnd(s, 13, 0.3, 2)}); });
  reg("op/exp", kTol, [=] { return check([](auto& x) { return exp(x[0]); }, {rnd(s, 14)}); });
  reg("op/log", kTol, [=] { return check([](auto& x) { return log(x[0]); }, {rnd(s, 15, 0.3, 2)}); });
  reg("op/abs", kTol, [=] { return check([](auto& x) { return abs(x[0]); }, {off_zero(s, 16)}); });
  reg("op/relu", kTol, [=] { return check([](auto& x) { return relu(x[0]); }, {off_zero(s, 17)}); });
  reg("op/leaky_relu", kTol, [=] { return check([](auto& x) { return leaky_relu(x[0]); }, {off_zero(s, 18)}); });
  reg("op/tanh", kTol, [=] { return check([](auto& x) { return tanh(x[0]); }, {rnd(s, 19, -2, 2)}); });

  // Reductions and shape ops.
  reg("op/sum", kTol, [=] { return check([](auto& x) { return sum(x[0], kN | kW); }, {rnd(s, 20)}); });
  reg("op/mean", kTol, [=] { return check([](auto& x) { return mean(x[0], kSpatial); }, {rnd(s, 21)}); });
  reg("op/sum_all", kTol, [=] { return check([](auto& x) { return sum_all(mul(x[0], x[0])); }, {rnd(s, 22)}); });
  reg("op/expand", kTol, [=] { return check([](auto& x) { return expand(x[0], Shape{2, 3, 4, 4}); }, {rnd(Shape{1, 3, 1, 4}, 23)}); });
  reg("op/sum_to", kTol, [=] { return check([](auto& x) { return sum_to(x[0], Shape{1, 3, 1, 1}); }, {rnd(s, 24)}); });
  reg("op/reshape", kTol, [=] { return check([](auto& x) { return reshape(x[0], Shape{2, 1, 6, 8}); }, {rnd(s, 25)}); });
  reg("op/concat", kTol, [=] {
    return check([](auto& x) { return concat({x[0], x[1]}, 1); }, {rnd(s, 26), rnd(Shape{2, 2, 4, 4}, 27)});
  });
  reg("op/narrow", kTol, [=] { return check([](auto& x) { return narrow(x[0], 1, 1, 2); }, {rnd(s, 28)}); });
  reg("op/pad", kTol, [=] { return check([](auto& x) { return pad(x[0], 0, 1, 4); }, {rnd(s, 29)}); });
  reg("op/interpolate_uniform", kTol, [=] {
    return check([](auto& x) { return interpolate_uniform(x[0], x[1], x[2]); },
                 {rnd(s, 30), rnd(s, 31), rnd(Shape{2, 1, 1, 1}, 32, 0, 1)});
  });

  // Convolutions.
  reg("op/conv2d", kTol, [=] {
    return check([](auto& x) { return conv2d(x[0], x[1], x[2], 2, 2); },
                 {rnd(Shape{2, 3, 8, 8}, 33), rnd(Shape{4, 3, 5, 5}, 34), rnd(Shape{1, 4, 1, 1}, 35)});
  });
  reg("op/conv2d_3x3", kTol, [=] {
    return check([](auto& x) { return conv2d(x[0], x[1], Tensor(), 1, 1); },
                 {rnd(Shape{1, 2, 5, 5}, 36), rnd(Shape{3, 2, 3, 3}, 37)});
  });
  reg("op/deconv2d", kTol, [=] {
    return check([](auto& x) { return deconv2d(x[0], x[1], x[2], 2, 2, 1); },
                 {rnd(Shape{2, 4, 4, 4}, 38), rnd(Shape{4, 3, 5, 5}, 39), rnd(Shape{1, 3, 1, 1}, 40)});
  });
  reg("op/conv2d_weight_grad", kTol, [=] {
    return check([](auto& x) { return conv2d_weight_grad(x[0], x[1], 5, 5, 2, 2); },
                 {rnd(Shape{2, 3, 8, 8}, 41), rnd(Shape{2, 4, 4, 4}, 42)});
  });

  // Pooling, indexing and set ops.
  reg("op/max_pool2", kTol, [=] { return check([](auto& x) { return max_pool2(x[0]); }, {distinct(s, 43)}); });
  reg("op/gather_index", kTol, [=] {
    return check([](auto& x) { return gather_index(x[0], {3, 0, 0, 5}, Shape{1, 1, 2, 2}); }, {rnd(Shape{1, 1, 2, 3}, 44)});
  });
  reg("op/scatter_index", kTol, [=] {
    return check([](auto& x) { return scatter_index(x[0], {3, 0, 0, 5}, Shape{1, 1, 2, 3}); }, {rnd(Shape{1, 1, 2, 2}, 45)});
  });
  for (auto [mode, label] : {std::pair{SetReduce::avg, "avg"}, {SetReduce::max, "max"}, {SetReduce::min, "min"}}) {
    reg(std::string("op/group_reduce_") + label, kTol, [=, mode = mode] {
      return check([mode](auto& x) { return group_reduce(x[0], 3, mode); }, {distinct(Shape{6, 2, 3, 3}, 46)});
    });
  }
  reg("op/group_broadcast", kTol, [=] { return check([](auto& x) { return group_broadcast(x[0], 3); }, {rnd(s, 47)}); });
  reg("op/group_sum", kTol, [=] { return check([](auto& x) { return group_sum(x[0], 2); }, {rnd(Shape{4, 3, 2, 2}, 48)}); });
  reg("op/channel_covariance", kTol, [=] { return check([](auto& x) { return channel_covariance(x[0]); }, {rnd(s, 49)}); });
  reg("op/log_softmax", kTol, [=] { return check([](auto& x) { return log_softmax(x[0]); }, {rnd(Shape{3, 5, 1, 1}, 50, -3, 3)}); });

  // Normalization.
  reg("op/batch_norm", kTol, [=] { return check([](auto& x) { return ln_affine(x[0], NormKind::batch); }, {rnd(s, 51)}); });
  reg("op/instance_norm", kTol, [=] { return check([](auto& x) { return ln_affine(x[0], NormKind::instance); }, {rnd(s, 52)}); });
  reg("op/layer_norm", kTol, [=] { return check([](auto& x) { return ln_affine(x[0], NormKind::layer); }, {rnd(s, 53)}); });
  reg("op/spatial_stats", kTol, [=] {
    return check([](auto& x) { auto st = spatial_stats(x[0]); return concat({st.mean, st.sigma}, 1); }, {rnd(s, 54)});
  });
  reg("op/adain", kTol, [=] {
    return check([](auto& x) { return adain(x[0], x[1]); }, {rnd(s, 55), rnd(Shape{2, 3, 6, 2}, 56, -2, 3)});
  });

  // Backward of backward, as used by the gradient penalty.
  reg("double/conv2d", kTolPenalty, [=] {
    Tensor w = rnd(Shape{3, 2, 5, 5}, 60);
    return check_double([w](const Tensor& x) { return sum_all(tanh(conv2d(x, w, Tensor(), 2, 2))); },
                        rnd(Shape{1, 2, 8, 8}, 61), 62);
  });
  reg("double/deconv2d", kTolPenalty, [=] {
    Tensor w = rnd(Shape{2, 3, 5, 5}, 63);
    return check_double([w](const Tensor& x) { return sum_all(tanh(deconv2d(x, w, Tensor(), 2, 2, 1))); },
                        rnd(Shape{1, 2, 4, 4}, 64), 65);
  });
  reg("double/layer_norm", kTolPenalty, [=] {
    return check_double([](const Tensor& x) { return sum_all(tanh(ln_affine(x, NormKind::layer))); },
                        rnd(s, 66), 67);
  });
  reg("double/leaky_relu", kTolPenalty, [=] {
    return check_double([](const Tensor& x) { return sum_all(mul(leaky_relu(x), x)); }, off_zero(s, 68), 69);
  });
  reg("double/sqrt_div", kTolPenalty, [=] {
    return check_double([](const Tensor& x) { return sum_all(div(sqrt(add_scalar(mul(x, x), 1.0)), add_scalar(x, 3))); },
                        rnd(s, 70), 71);
  });

  // Loss terms.
  const Shape img{2, 1, 32, 32};
  auto tiny_cfg = [] {
    WNetConfig cfg = WNetConfig::defaults(32);
    for (int& w : cfg.enc_widths) w = 2;
    for (int& w : cfg.critic_widths) w = 2;
    cfg.I = 3;
    cfg.mixer.blocks_per_layer = 1;
    return cfg;
  };
  reg("loss/adversarial", kTol, [=] {
    Critic D(tiny_cfg(), 80);
    Triple real{rnd(img, 81), rnd(img, 82), rnd(img, 83)};
    return check([&](auto& x) { return adv_losses(D, real, Triple{real.prototype, x[0], real.reference}).adv_d; },
                 {rnd(img, 84)});
  });
  reg("loss/gradient_penalty", kTolPenalty, [=] {
    Critic D(tiny_cfg(), 85);
    Triple real{rnd(img, 86), rnd(img, 87), rnd(img, 88)};
    Triple fake{real.prototype, rnd(img, 89), real.reference};
    Tensor u = rnd(Shape{2, 1, 1, 1}, 90, 0, 1);
    return check(
        [&](auto& ps) {
          std::vector<Tensor> saved = D.params().rebind(ps);
          Tensor p = gradient_penalty(D, real, fake, u).penalty;
          D.params().rebind(saved);
          return p;
        },
        D.params().params());
  });
  reg("loss/ac", kTol, [=] {
    return check([](auto& x) { return ac_loss(x[0], x[1], {1, 3}); },
                 {rnd(Shape{2, 3, 1, 1}, 91), rnd(Shape{2, 3, 1, 1}, 92)});
  });
  reg("loss/const", kTol, [=] {
    Generator G(tiny_cfg(), 93);
    spread_params(G.params(), 930);
    Tensor protos = rnd(Shape{2, 3, 32, 32}, 94), refs = rnd(Shape{4, 1, 32, 32}, 95);
    Tensor generated = rnd(img, 96);
    return check(
        [&](auto& x) {
          std::vector<Tensor> saved = G.params().rebind(std::vector<Tensor>(x.begin() + 1, x.end()));
          GeneratorPass pass = G.forward(protos, refs, 2, false);
          ConstLosses c = const_losses(G, pass, x[0], false);
          G.params().rebind(saved);
          return add(c.content, c.style);
        },
        [&] {
          std::vector<Tensor> in{generated};
          for (const Tensor& p : G.params().params()) in.push_back(p);
          return in;
        }());
  });
  reg("loss/pixel_l1", kTol, [=] { return check([](auto& x) { return pixel_l1(x[0], x[1]); }, {off_zero(s, 97), rnd(s, 98, -0.1, 0.1)}); });
  reg("loss/von_neumann", kTol, [=] {
    return check([](auto& x) { return von_neumann_div(channel_covariance(x[0]), channel_covariance(x[1])); },
                 {rnd(Shape{2, 3, 3, 3}, 99), rnd(Shape{2, 3, 3, 3}, 100)});
  });
  reg("loss/perceptual", kTol, [=] {
    ClassifierConfig cc;
    cc.size = 32;
    cc.J = 2;
    cc.I = 2;
    cc.widths = {2, 2, 3, 3, 3};
    cc.convs = {1, 1, 1, 1, 1};
    Classifier phi(cc, 101);
    Tensor tgt = rnd(Shape{1, 1, 32, 32}, 102);
    return check([&](auto& x) { return perceptual_total({&phi, &phi, &phi}, x[0], tgt, tgt, tgt, LossWeights{}).total; },
                 {rnd(Shape{1, 1, 32, 32}, 103)});
  });
  reg("loss/total_G", kTol, [=] {
    return check(
        [](auto& x) {
          auto at = [&](int k) { return narrow(x[0], 1, k, 1); };
          return total_G(GeneratorTerms{at(0), at(1), at(2), at(3), at(4), at(5)}, LossWeights{});
        },
        {rnd(Shape{1, 6, 1, 1}, 104)});
  });
  reg("loss/total_D", kTol, [=] {
    return check(
        [](auto& x) {
          auto at = [&](int k) { return narrow(x[0], 1, k, 1); };
          return total_D(CriticTerms{at(0), at(1), at(2)}, LossWeights{});
        },
        {rnd(Shape{1, 3, 1, 1}, 105)});
  });

  if (opt.broken_fixture) {
    reg("fixture/broken_square", kTol, [=] { return check([](auto& x) { return broken_square(x[0]); }, {rnd(s, 106)}); });
  }
  return cs;
}

}  // namespace

std::vector<GradCaseResult> run_grad_suite(const GradSuiteOptions& opt, std::ostream* log) {
  std::vector<GradCaseResult> out;
  for (const Case& c : build_cases(opt)) {
    if (!opt.filter.empty() && c.name.find(opt.filter) == std::string::npos) continue;
    GradCaseResult r;
    r.name = c.name;
    r.tolerance = c.tol;
    auto t0 = std::chrono::steady_clock::now();
    r.max_rel_error = c.run();
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.passed = r.max_rel_error < c.tol;
    if (log) {
      *log << std::left << std::setw(28) << r.name << (r.passed ? " pass " : " FAIL ") << std::scientific
           << std::setprecision(2) << r.max_rel_error << " (tol " << r.tolerance << ")" << std::defaultfloat
           << "\n";
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace gwnet
