#include "gwnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <random>

#include "gwnet/ops.hpp"

namespace gwnet {
namespace {

std::vector<Tensor> fresh_leaves(const std::vector<Tensor>& inputs) {
  std::vector<Tensor> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    leaves.push_back(t.clone().set_requires_grad(true));
  }
  return leaves;
}

}  // namespace

GradCheckReport grad_check_report(const TensorFn& f,
                                  const std::vector<Tensor>& inputs,
                                  double step, std::uint64_t seed) {
  std::vector<Tensor> leaves = fresh_leaves(inputs);
  Tensor probe = f(leaves);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.5, 1.5);
  std::vector<double> w(probe.numel());
  for (double& v : w) v = (rng() & 1 ? 1.0 : -1.0) * uni(rng);
  Tensor weights(probe.shape(), w);
  auto objective = [&](const std::vector<Tensor>& xs) {
    return sum_all(mul(f(xs), weights));
  };

  std::vector<Tensor> analytic = grad(objective(leaves), leaves);

  GradCheckReport report;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<Tensor> probe_inputs;
    for (const Tensor& t : inputs) probe_inputs.push_back(t.clone());
    auto values = probe_inputs[k].mutable_data();
    auto a = analytic[k].data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + step;
      double up = objective(probe_inputs).item();
      values[i] = orig - step;
      double down = objective(probe_inputs).item();
      values[i] = orig;
      double numeric = (up - down) / (2 * step);
      double denom = std::max({std::fabs(a[i]), std::fabs(numeric), 1e-3});
      double rel = std::fabs(a[i] - numeric) / denom;
      ++report.elements;
      if (rel > report.max_rel_error || !std::isfinite(rel)) {
        report.max_rel_error = std::isfinite(rel) ? rel : HUGE_VAL;
        report.worst_input = k;
        report.worst_index = i;
        report.analytic = a[i];
        report.numeric = numeric;
      }
    }
  }
  return report;
}

double grad_check(const TensorFn& f, const std::vector<Tensor>& inputs,
                  double step) {
  return grad_check_report(f, inputs, step).max_rel_error;
}

Tensor input_gradient(const std::function<Tensor(const Tensor&)>& f,
                      const Tensor& x, InputGradMode mode, double step) {
  GradModeGuard recording(true);
  if (mode == InputGradMode::exact) {
    Tensor leaf = x.detach().set_requires_grad(true);
    Tensor y = f(leaf);
    if (y.numel() != 1) {
      throw ShapeError("input_gradient: function output " + y.shape().str() +
                       " is not scalar");
    }
    return grad(y, {leaf}, /*create_graph=*/true)[0];
  }
  std::clog << "[gwnet] input_gradient: finite-difference fallback on "
            << x.shape().str() << " (step " << step << ")\n";
  Tensor base = x.detach();
  std::vector<Tensor> parts;
  parts.reserve(base.numel());
  for (std::size_t i = 0; i < base.numel(); ++i) {
    Tensor up = base.clone();
    Tensor down = base.clone();
    up.mutable_data()[i] += step;
    down.mutable_data()[i] -= step;
    Tensor fu = f(up), fd = f(down);
    if (fu.numel() != 1) {
      throw ShapeError("input_gradient: function output " + fu.shape().str() +
                       " is not scalar");
    }
    parts.push_back(reshape(scale(sub(fu, fd), 1.0 / (2 * step)), Shape{}));
  }
  return reshape(concat(parts, 3),
                 x.shape());
}

}  // namespace gwnet
