#include "gwnet/params.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace gwnet {

double truncated_normal(std::mt19937_64& rng) {
  // Box-Muller on raw 53-bit draws: same stream on every standard library.
  auto u01 = [&] { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; };
  for (;;) {
    double z = std::sqrt(-2.0 * std::log(u01())) * std::cos(2.0 * std::numbers::pi * u01());
    if (std::fabs(z) <= 2.0) return z;
  }
}

Tensor& ParamStore::insert(const std::string& name, Tensor t, bool trainable) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name " + name);
  (trainable ? param_names_ : buffer_names_).push_back(name);
  t.set_requires_grad(trainable);
  entries_.emplace_back(name, std::move(t));
  return entries_.back().second;
}

Tensor& ParamStore::normal(const std::string& name, Shape shape, std::mt19937_64& rng,
                           double stddev) {
  std::vector<double> v(shape.numel());
  for (double& x : v) x = stddev * truncated_normal(rng);
  return insert(name, Tensor(shape, std::move(v)), true);
}

Tensor& ParamStore::constant(const std::string& name, Shape shape, double value) {
  return insert(name, Tensor(shape, value), true);
}

Tensor& ParamStore::buffer(const std::string& name, Shape shape, double value) {
  return insert(name, Tensor(shape, value), false);
}

Tensor& ParamStore::get(const std::string& name) {
  for (auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw std::out_of_range("no parameter named " + name);
}

const Tensor& ParamStore::get(const std::string& name) const {
  return const_cast<ParamStore*>(this)->get(name);
}

bool ParamStore::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e.first == name; });
}

std::vector<Tensor> ParamStore::params() const {
  std::vector<Tensor> out;
  out.reserve(param_names_.size());
  for (const auto& [n, t] : entries_) {
    if (t.requires_grad()) out.push_back(t);
  }
  return out;
}

std::size_t ParamStore::param_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) {
    if (t.requires_grad()) n += t.numel();
  }
  return n;
}

void ParamStore::set_trainable(bool flag) {
  for (const std::string& n : param_names_) get(n).set_requires_grad(flag);
}

void ParamStore::copy_from(const ParamStore& other) {
  for (auto& [name, t] : entries_) {
    if (!other.contains(name)) continue;
    const Tensor& src = other.get(name);
    if (!(src.shape() == t.shape())) {
      throw ShapeError("copy_from: " + name + " has shape " + src.shape().str() +
                       ", expected " + t.shape().str());
    }
    auto d = t.mutable_data();
    std::copy(src.data().begin(), src.data().end(), d.begin());
  }
}

std::vector<Tensor> ParamStore::rebind(std::vector<Tensor> tensors) {
  if (tensors.size() != param_names_.size()) {
    throw std::invalid_argument("rebind: got " + std::to_string(tensors.size()) + " tensors for " +
                                std::to_string(param_names_.size()) + " params");
  }
  std::vector<Tensor> old;
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    Tensor& slot = get(param_names_[k]);
    if (!(slot.shape() == tensors[k].shape())) {
      throw ShapeError("rebind: " + param_names_[k] + " has shape " + slot.shape().str() + ", got " +
                       tensors[k].shape().str());
    }
    old.push_back(slot);
    slot = tensors[k];
  }
  return old;
}

Adam::Adam(ParamStore& store, AdamConfig cfg) : store_(&store), cfg_(cfg) {
  for (const std::string& n : store.param_names()) {
    m_.emplace_back(store.get(n).numel(), 0.0);
    v_.emplace_back(store.get(n).numel(), 0.0);
  }
}

void Adam::step(const std::vector<Tensor>& grads) {
  const auto& names = store_->param_names();
  if (grads.size() != names.size()) {
    throw std::invalid_argument("Adam: got " + std::to_string(grads.size()) +
                                " gradients for " + std::to_string(names.size()) + " params");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (!grads[k].defined()) continue;
    auto p = store_->get(names[k]).mutable_data();
    auto g = grads[k].data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1 - cfg_.beta2) * g[i] * g[i];
      p[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
    }
  }
}

std::vector<std::pair<std::string, Tensor>> Adam::state() const {
  std::vector<std::pair<std::string, Tensor>> out;
  const auto& names = store_->param_names();
  for (std::size_t k = 0; k < names.size(); ++k) {
    Shape s = store_->get(names[k]).shape();
    out.emplace_back(names[k] + "/m", Tensor(s, m_[k]));
    out.emplace_back(names[k] + "/v", Tensor(s, v_[k]));
  }
  return out;
}

void Adam::load_state(const std::vector<std::pair<std::string, Tensor>>& blobs, long steps) {
  const auto& names = store_->param_names();
  for (std::size_t k = 0; k < names.size(); ++k) {
    bool got_m = false, got_v = false;
    for (const auto& [n, t] : blobs) {
      if (t.numel() != m_[k].size()) continue;
      if (n == names[k] + "/m") {
        m_[k].assign(t.data().begin(), t.data().end());
        got_m = true;
      } else if (n == names[k] + "/v") {
        v_[k].assign(t.data().begin(), t.data().end());
        got_v = true;
      }
    }
    if (!got_m || !got_v) throw DataError("optimizer state missing for " + names[k]);
  }
  t_ = steps;
}

}  // namespace gwnet
