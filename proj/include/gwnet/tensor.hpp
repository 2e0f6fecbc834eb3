#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gwnet {

/// Raised when tensor shapes or channel counts do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produced NaN/Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for malformed input files, manifests and checkpoints.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NCHW extents. Lower-rank data uses size-1 trailing dims.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  int operator[](int axis) const;
  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::string str() const;
  friend bool operator==(const Shape&, const Shape&) = default;
};

// Axis bitmask used by reductions.
enum Axis : unsigned { kN = 1u, kC = 2u, kH = 4u, kW = 8u, kSpatial = 12u, kCHW = 14u, kAll = 15u };

class Node;
struct TensorImpl;

/// Reference-counted handle to an immutable NCHW array of doubles that can
/// take part in reverse-mode differentiation. Copies share storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const { return shape().numel(); }
  std::span<const double> data() const;
  /// In-place access; only permitted on tensors without a grad_fn
  /// (parameters, buffers, freshly built inputs).
  std::span<double> mutable_data();
  double item() const;
  double at(int n, int c, int h, int w) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  /// Accumulated gradient from backward(); undefined until one ran.
  Tensor grad() const;
  void zero_grad();
  const std::shared_ptr<Node>& grad_fn() const;

  /// Shares storage, drops the graph.
  Tensor detach() const;
  /// Deep copy without graph.
  Tensor clone() const;

  /// Reverse pass from a scalar, accumulating into .grad() of every leaf
  /// that requires grad.
  void backward() const;

  const TensorImpl* id() const { return impl_.get(); }

 private:
  friend Tensor make_result(Shape, std::vector<double>, std::string_view,
                            std::vector<Tensor>,
                            std::function<std::vector<Tensor>(
                                const Tensor&, std::span<const bool>,
                                const std::vector<Tensor>&)>,
                            bool);
  friend class Engine;
  std::shared_ptr<TensorImpl> impl_;
};

using BackwardFn = std::function<std::vector<Tensor>(
    const Tensor& grad_out, std::span<const bool> needs,
    const std::vector<Tensor>& inputs)>;

/// Graph node recorded by an op. backward() expresses the vector-Jacobian
/// product with Tensor ops, so running it with grad mode on yields a
/// differentiable gradient (double backward) unless the node opts out.
class Node {
 public:
  Node(std::string_view name, std::vector<Tensor> inputs, BackwardFn fn,
       bool higher_order);
  const std::vector<Tensor>& inputs() const { return inputs_; }
  std::string_view name() const { return name_; }
  bool higher_order() const { return higher_order_; }
  std::vector<Tensor> backward(const Tensor& grad_out,
                               std::span<const bool> needs) const;

 private:
  std::string name_;
  std::vector<Tensor> inputs_;
  BackwardFn fn_;
  bool higher_order_;
};

/// Builds an op output and, when grad mode is on and an input requires grad,
/// attaches a node. `higher_order=false` marks backward formulas that are
/// computed on raw buffers; differentiating through them again throws.
Tensor make_result(Shape shape, std::vector<double> values,
                   std::string_view name, std::vector<Tensor> inputs,
                   BackwardFn fn, bool higher_order = true);

bool grad_enabled();

/// Scoped switch of graph recording for the current thread.
class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool prev_;
};

class NoGradGuard : public GradModeGuard {
 public:
  NoGradGuard() : GradModeGuard(false) {}
};

/// Gradients of scalar `output` w.r.t. `inputs`, without touching .grad().
/// With create_graph the results carry their own graph so they can be
/// differentiated again. Inputs the output does not depend on get zeros.
std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& inputs,
                         bool create_graph = false);

}  // namespace gwnet
