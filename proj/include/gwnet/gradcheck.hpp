#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gwnet/tensor.hpp"

namespace gwnet {

using TensorFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t elements = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares reverse-mode gradients of f against central differences on
/// every input element. Non-scalar outputs are contracted with fixed
/// pseudo-random weights first. Relative error per element is
/// |a - n| / max(|a|, |n|, 1e-3).
GradCheckReport grad_check_report(const TensorFn& f,
                                  const std::vector<Tensor>& inputs,
                                  double step = 1e-5,
                                  std::uint64_t seed = 0x5eed);

double grad_check(const TensorFn& f, const std::vector<Tensor>& inputs,
                  double step = 1e-5);

enum class InputGradMode { exact, finite_difference };

/// ∇_x f for scalar f. The result is differentiable w.r.t. anything f
/// depends on besides x (parameters), so penalties on it can be trained.
/// finite_difference builds each component from two evaluations of f at
/// x ± step·e_k; it is meant for small inputs and is logged when used.
Tensor input_gradient(const std::function<Tensor(const Tensor&)>& f,
                      const Tensor& x,
                      InputGradMode mode = InputGradMode::exact,
                      double step = 1e-3);

}  // namespace gwnet
