#include "gwnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "gwnet/ops.hpp"

namespace gwnet {

struct TensorImpl {
  Shape shape;
  std::shared_ptr<std::vector<double>> values;
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;
  std::shared_ptr<TensorImpl> grad;
};

namespace {

thread_local bool t_grad_enabled = true;

std::shared_ptr<TensorImpl> new_impl(Shape shape,
                                     std::vector<double> values) {
  if (shape.n <= 0 || shape.c <= 0 || shape.h <= 0 || shape.w <= 0) {
    throw ShapeError("tensor dims must be positive, got " + shape.str());
  }
  if (values.size() != shape.numel()) {
    throw ShapeError("tensor of shape " + shape.str() + " needs " +
                     std::to_string(shape.numel()) + " values, got " +
                     std::to_string(values.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->values = std::make_shared<std::vector<double>>(std::move(values));
  return impl;
}

}  // namespace

int Shape::operator[](int axis) const {
  switch (axis) {
    case 0: return n;
    case 1: return c;
    case 2: return h;
    case 3: return w;
    default: throw ShapeError("axis out of range: " + std::to_string(axis));
  }
}

std::string Shape::str() const {
  std::ostringstream os;
  os << n << "x" << c << "x" << h << "x" << w;
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : impl_(new_impl(shape, std::vector<double>(shape.numel(), fill))) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : impl_(new_impl(shape, std::move(values))) {}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, v); }

const Shape& Tensor::shape() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->shape;
}

std::span<const double> Tensor::data() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return *impl_->values;
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  if (impl_->grad_fn) {
    throw std::logic_error("in-place write to a non-leaf tensor");
  }
  return *impl_->values;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape().str());
  }
  return data()[0];
}

double Tensor::at(int n, int c, int h, int w) const {
  const Shape& s = shape();
  return data()[((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  if (impl_->grad_fn && !flag) {
    throw std::logic_error("cannot clear requires_grad on a non-leaf");
  }
  impl_->requires_grad = flag;
  return *this;
}

Tensor Tensor::grad() const {
  Tensor g;
  if (impl_) g.impl_ = impl_->grad;
  return g;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.reset();
}

const std::shared_ptr<Node>& Tensor::grad_fn() const {
  static const std::shared_ptr<Node> kNone;
  return impl_ ? impl_->grad_fn : kNone;
}

Tensor Tensor::detach() const {
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = shape();
  t.impl_->values = impl_->values;
  return t;
}

Tensor Tensor::clone() const {
  return Tensor(shape(), std::vector<double>(data().begin(), data().end()));
}

Node::Node(std::string_view name, std::vector<Tensor> inputs, BackwardFn fn,
           bool higher_order)
    : name_(name),
      inputs_(std::move(inputs)),
      fn_(std::move(fn)),
      higher_order_(higher_order) {}

std::vector<Tensor> Node::backward(const Tensor& grad_out,
                                   std::span<const bool> needs) const {
  return fn_(grad_out, needs, inputs_);
}

bool grad_enabled() { return t_grad_enabled; }

GradModeGuard::GradModeGuard(bool enabled) : prev_(t_grad_enabled) {
  t_grad_enabled = enabled;
}
GradModeGuard::~GradModeGuard() { t_grad_enabled = prev_; }

Tensor make_result(Shape shape, std::vector<double> values,
                   std::string_view name, std::vector<Tensor> inputs,
                   BackwardFn fn, bool higher_order) {
  Tensor out(shape, std::move(values));
  if (!t_grad_enabled) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(),
                         [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  out.impl_->requires_grad = true;
  out.impl_->grad_fn = std::make_shared<Node>(name, std::move(inputs),
                                              std::move(fn), higher_order);
  return out;
}

// Reverse-mode sweep over the recorded graph. Nodes are visited in reverse
// topological order; gradient accumulation order is fixed by the DFS order,
// so repeated runs are bit-identical.
class Engine {
 public:
  static std::unordered_map<const TensorImpl*, Tensor> run(
      const Tensor& root, const std::vector<const TensorImpl*>& targets,
      bool all_leaves, bool create_graph) {
    if (root.numel() != 1) {
      throw ShapeError("gradient requested of non-scalar output " +
                       root.shape().str());
    }
    std::unordered_set<const TensorImpl*> target_set(targets.begin(),
                                                     targets.end());
    // reach[impl]: whether impl leads to a wanted leaf/target.
    std::unordered_map<const TensorImpl*, bool> reach;
    std::vector<const TensorImpl*> order;  // post-order
    std::unordered_map<const TensorImpl*, std::shared_ptr<TensorImpl>> keep;

    struct Frame {
      std::shared_ptr<TensorImpl> impl;
      std::size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({root.impl_, 0});
    reach[root.impl_.get()] = false;
    while (!stack.empty()) {
      Frame& f = stack.back();
      TensorImpl* impl = f.impl.get();
      const auto& fn = impl->grad_fn;
      if (fn && f.next < fn->inputs().size()) {
        const Tensor& in = fn->inputs()[f.next++];
        if (!in.impl_ || !in.impl_->requires_grad) continue;
        if (reach.count(in.impl_.get())) continue;
        reach[in.impl_.get()] = false;
        stack.push_back({in.impl_, 0});
        continue;
      }
      bool r = target_set.count(impl) > 0 || (all_leaves && !fn);
      if (fn) {
        for (const Tensor& in : fn->inputs()) {
          if (in.impl_ && in.impl_->requires_grad && reach[in.impl_.get()]) {
            r = true;
          }
        }
      }
      reach[impl] = r;
      if (r) {
        order.push_back(impl);
        keep[impl] = f.impl;
      }
      stack.pop_back();
    }

    std::unordered_map<const TensorImpl*, Tensor> grads;
    std::unordered_map<const TensorImpl*, Tensor> result;
    if (!reach[root.impl_.get()]) return result;

    std::optional<NoGradGuard> guard;
    if (!create_graph) guard.emplace();

    grads[root.impl_.get()] = Tensor(root.shape(), 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const TensorImpl* impl = *it;
      auto git = grads.find(impl);
      if (git == grads.end()) continue;
      Tensor g = git->second;
      grads.erase(git);
      if (target_set.count(impl) || (all_leaves && !impl->grad_fn)) {
        result[impl] = g;
      }
      const auto& fn = impl->grad_fn;
      if (!fn) continue;
      if (create_graph && !fn->higher_order()) {
        throw std::logic_error(std::string("op '") + std::string(fn->name()) +
                               "' does not support double backward");
      }
      const auto& ins = fn->inputs();
      std::unique_ptr<bool[]> needs(new bool[ins.size()]);
      for (std::size_t k = 0; k < ins.size(); ++k) {
        needs[k] = ins[k].impl_ && ins[k].impl_->requires_grad &&
                   reach[ins[k].impl_.get()];
      }
      std::vector<Tensor> in_grads =
          fn->backward(g, std::span<const bool>(needs.get(), ins.size()));
      for (std::size_t k = 0; k < ins.size(); ++k) {
        if (!needs[k]) continue;
        const Tensor& ig = in_grads.at(k);
        if (!ig.defined()) continue;
        if (!(ig.shape() == ins[k].shape())) {
          throw std::logic_error(std::string("backward of '") +
                                 std::string(fn->name()) +
                                 "' produced gradient " + ig.shape().str() +
                                 " for input " + ins[k].shape().str());
        }
        auto [slot, fresh] = grads.try_emplace(ins[k].impl_.get(), ig);
        if (!fresh) slot->second = add(slot->second, ig);
      }
    }
    return result;
  }

  static void accumulate(const Tensor& root) {
    auto grads = run(root, {}, /*all_leaves=*/true, /*create_graph=*/false);
    // run() only reports leaves; map them back through the graph.
    std::vector<std::shared_ptr<TensorImpl>> leaves;
    collect_leaves(root, leaves);
    for (auto& leaf : leaves) {
      auto it = grads.find(leaf.get());
      if (it == grads.end()) continue;
      if (!leaf->grad) {
        leaf->grad = it->second.clone().impl_;
      } else {
        auto& dst = *leaf->grad->values;
        auto src = it->second.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      }
    }
  }

 private:
  static void collect_leaves(const Tensor& root,
                             std::vector<std::shared_ptr<TensorImpl>>& out) {
    std::unordered_set<const TensorImpl*> seen;
    std::vector<std::shared_ptr<TensorImpl>> stack{root.impl_};
    while (!stack.empty()) {
      auto impl = stack.back();
      stack.pop_back();
      if (!seen.insert(impl.get()).second) continue;
      if (!impl->grad_fn) {
        if (impl->requires_grad) out.push_back(impl);
        continue;
      }
      for (const Tensor& in : impl->grad_fn->inputs()) {
        if (in.impl_ && in.impl_->requires_grad) stack.push_back(in.impl_);
      }
    }
  }
};

void Tensor::backward() const { Engine::accumulate(*this); }

std::vector<Tensor> grad(const Tensor& output,
                         const std::vector<Tensor>& inputs,
                         bool create_graph) {
  std::vector<const TensorImpl*> ids;
  ids.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    if (!t.defined()) throw std::invalid_argument("grad(): undefined input");
    ids.push_back(t.id());
  }
  auto found = Engine::run(output, ids, false, create_graph);
  std::vector<Tensor> out;
  out.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    auto it = found.find(t.id());
    out.push_back(it != found.end() ? it->second : Tensor(t.shape(), 0.0));
  }
  return out;
}

}  // namespace gwnet
