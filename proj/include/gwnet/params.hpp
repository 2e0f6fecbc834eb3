#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gwnet/tensor.hpp"

namespace gwnet {

/// Ordered, named collection of trainable tensors plus non-trainable
/// buffers (batch-norm running stats). Names are stable checkpoint keys.
class ParamStore {
 public:
  /// Truncated normal (|z| <= 2) with the given std, drawn from `rng`.
  Tensor& normal(const std::string& name, Shape shape, std::mt19937_64& rng,
                 double stddev = 0.02);
  Tensor& constant(const std::string& name, Shape shape, double value);
  Tensor& buffer(const std::string& name, Shape shape, double value);

  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::string>& param_names() const { return param_names_; }
  std::vector<Tensor> params() const;
  const std::vector<std::string>& buffer_names() const { return buffer_names_; }

  std::size_t param_count() const;
  void set_trainable(bool flag);
  /// Copies values from `other` for every shared name; shapes must match.
  void copy_from(const ParamStore& other);
  /// Swaps in new handles for the trainable tensors (params() order, same
  /// shapes) and returns the previous ones. Used to evaluate a model at
  /// probe values, e.g. in gradient checks.
  std::vector<Tensor> rebind(std::vector<Tensor> tensors);

 private:
  Tensor& insert(const std::string& name, Tensor t, bool trainable);
  std::vector<std::string> param_names_;
  std::vector<std::string> buffer_names_;
  std::vector<std::pair<std::string, Tensor>> entries_;
};

double truncated_normal(std::mt19937_64& rng);

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer over one ParamStore's trainable tensors.
class Adam {
 public:
  Adam(ParamStore& store, AdamConfig cfg);
  /// grads[k] belongs to store.param_names()[k]; undefined grads are skipped.
  void step(const std::vector<Tensor>& grads);
  long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

  // Moments as named tensors for checkpointing ("<param>/m", "<param>/v").
  std::vector<std::pair<std::string, Tensor>> state() const;
  void load_state(const std::vector<std::pair<std::string, Tensor>>& blobs, long steps);

 private:
  ParamStore* store_;
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace gwnet
