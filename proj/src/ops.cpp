#include "gwnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gwnet {
namespace {

const char* axis_name(int axis) {
  static const char* names[] = {"N", "C", "H", "W"};
  return names[axis];
}

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  int dims[4];
  for (int ax = 0; ax < 4; ++ax) {
    int da = a[ax], db = b[ax];
    if (da == db || db == 1) {
      dims[ax] = da;
    } else if (da == 1) {
      dims[ax] = db;
    } else {
      throw ShapeError(std::string(op) + ": cannot broadcast " + a.str() +
                       " with " + b.str() + " along " + axis_name(ax));
    }
  }
  return Shape{dims[0], dims[1], dims[2], dims[3]};
}

struct Strides {
  std::size_t n, c, h, w;
};

// Element strides of `s` when broadcast to a larger shape (0 on size-1 dims).
Strides broadcast_strides(const Shape& s, const Shape& out) {
  std::size_t w = 1, h = s.w, c = std::size_t(s.h) * s.w,
              n = std::size_t(s.c) * s.h * s.w;
  return Strides{s.n == 1 && out.n != 1 ? 0 : n, s.c == 1 && out.c != 1 ? 0 : c,
                 s.h == 1 && out.h != 1 ? 0 : h, s.w == 1 && out.w != 1 ? 0 : w};
}

template <class F>
std::vector<double> binary_map(const Tensor& a, const Tensor& b,
                               const Shape& out, F f) {
  std::vector<double> r(out.numel());
  auto da = a.data();
  auto db = b.data();
  if (a.shape() == out && b.shape() == out) {
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = f(da[i], db[i]);
    return r;
  }
  Strides sa = broadcast_strides(a.shape(), out);
  Strides sb = broadcast_strides(b.shape(), out);
  std::size_t i = 0;
  for (int n = 0; n < out.n; ++n)
    for (int c = 0; c < out.c; ++c)
      for (int h = 0; h < out.h; ++h) {
        std::size_t ia = n * sa.n + c * sa.c + h * sa.h;
        std::size_t ib = n * sb.n + c * sb.c + h * sb.h;
        for (int w = 0; w < out.w; ++w, ++i) {
          r[i] = f(da[ia + w * sa.w], db[ib + w * sb.w]);
        }
      }
  return r;
}

template <class F>
std::vector<double> unary_map(const Tensor& x, F f) {
  auto d = x.data();
  std::vector<double> r(d.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = f(d[i]);
  return r;
}

// Elementwise op whose derivative is g * dfdx(x), with dfdx built from ops.
template <class F, class D>
Tensor unary_op(const Tensor& x, const char* name, F f, D dfdx) {
  return make_result(
      x.shape(), unary_map(x, f), name, {x},
      [dfdx](const Tensor& g, std::span<const bool>,
             const std::vector<Tensor>& in) -> std::vector<Tensor> {
        return {mul(g, dfdx(in[0]))};
      });
}

// Constant mask of the same shape as x.
template <class F>
Tensor mask_of(const Tensor& x, F f) {
  return Tensor(x.shape(), unary_map(x, f));
}

std::size_t outer_extent(const Shape& s, int axis) {
  std::size_t r = 1;
  for (int a = 0; a < axis; ++a) r *= s[a];
  return r;
}

std::size_t inner_extent(const Shape& s, int axis) {
  std::size_t r = 1;
  for (int a = axis + 1; a < 4; ++a) r *= s[a];
  return r;
}

Shape with_axis(Shape s, int axis, int extent) {
  switch (axis) {
    case 0: s.n = extent; break;
    case 1: s.c = extent; break;
    case 2: s.h = extent; break;
    case 3: s.w = extent; break;
    default: throw ShapeError("axis out of range");
  }
  return s;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  Shape out = broadcast_shapes(a.shape(), b.shape(), "add");
  return make_result(
      out, binary_map(a, b, out, [](double x, double y) { return x + y; }),
      "add", {a, b},
      [](const Tensor& g, std::span<const bool> needs,
         const std::vector<Tensor>& in) -> std::vector<Tensor> {
        return {needs[0] ? sum_to(g, in[0].shape()) : Tensor(),
                needs[1] ? sum_to(g, in[1].shape()) : Tensor()};
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Shape out = broadcast_shapes(a.shape(), b.shape(), "sub");
  return make_result(
      out, binary_map(a, b, out, [](double x, double y) { return x - y; }),
      "sub", {a, b},
      [](const Tensor& g, std::span<const bool> needs,
         const std::vector<Tensor>& in) -> std::vector<Tensor> {
        return {needs[0] ? sum_to(g, in[0].shape()) : Tensor(),
                needs[1] ? neg(sum_to(g, in[1].shape())) : Tensor()};
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Shape out = broadcast_shapes(a.shape(), b.shape(), "mul");
  return make_result(
      out, binary_map(a, b, out, [](double x, double y) { return x * y; }),
      "mul", {a, b},
      [](const Tensor& g, std::span<const bool> needs,
         const std::vector<Tensor>& in) -> std::vector<Tensor> {
        return {needs[0] ? sum_to(mul(g, in[1]), in[0].shape()) : Tensor(),
                needs[1] ? sum_to(mul(g, in[0]), in[1].shape()) : Tensor()};
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  Shape out = broadcast_shapes(a.shape(), b.shape(), "div");
  return make_result(
      out, binary_map(a, b, out, [](double x, double y) { return x / y; }),
      "div", {a, b},
      [](const Tensor& g, std::span<const bool> needs,
         const std::vector<Tensor>& in) -> std::vector<Tensor> {
        Tensor ga, gb;
        if (needs[0]) ga = sum_to(div(g, in[1]), in[0].shape());
        if (needs[1]) {
          gb = sum_to(neg(div(mul(g, in[0]), mul(in[1], in[1]))),
                      in[1].shape());
        }
        return {ga, gb};
      });
}

Tensor neg(const Tensor& x) {
  return make_result(x.shape(), unary_map(x, [](double v) { return -v; }),
                     "neg", {x},
                     [](const Tensor& g, std::span<const bool>,
                        const std::vector<Tensor>&) -> std::vector<Tensor> {
                       return {neg(g)};
                     });
}

Tensor scale(const Tensor& x, double s) {
  return make_result(x.shape(), unary_map(x, [s](double v) { return v * s; }),
                     "scale", {x},
                     [s](const Tensor& g, std::span<const bool>,
                         const std::vector<Tensor>&) -> std::vector<Tensor> {
                       return {scale(g, s)};
                     });
}

Tensor add_scalar(const Tensor& x, double s) {
  return make_result(x.shape(), unary_map(x, [s](double v) { return v + s; }),
                     "add_scalar", {x},
                     [](const Tensor& g, std::span<const bool>,
                        const std::vector<Tensor>&) -> std::vector<Tensor> {
                       return {g};
                     });
}

Tensor pow_scalar(const Tensor& x, double p) {
  return unary_op(
      x, "pow", [p](double v) { return std::pow(v, p); },
      [p](const Tensor& in) { return scale(pow_scalar(in, p - 1.0), p); });
}

Tensor sqrt(const Tensor& x) { return pow_scalar(x, 0.5); }

Tensor exp(const Tensor& x) {
  return unary_op(
      x, "exp", [](double v) { return std::exp(v); },
      [](const Tensor& in) { return exp(in); });
}

Tensor log(const Tensor& x) {
  return unary_op(
      x, "log", [](double v) { return std::log(v); },
      [](const Tensor& in) { return pow_scalar(in, -1.0); });
}

Tensor abs(const Tensor& x) {
  return unary_op(
      x, "abs", [](double v) { return std::fabs(v); },
      [](const Tensor& in) {
        return mask_of(in, [](double v) {
          return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
        });
      });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary_op(
      x, "leaky_relu",
      [slope](double v) { return v > 0 || std::isnan(v) ? v : (slope == 0 ? 0.0 : slope * v); },
      [slope](const Tensor& in) {
        return mask_of(in, [slope](double v) { return v > 0 ? 1.0 : slope; });
      });
}

Tensor relu(const Tensor& x) { return leaky_relu(x, 0.0); }

Tensor tanh(const Tensor& x) {
  return unary_op(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](const Tensor& in) {
        Tensor t = tanh(in);
        return add_scalar(neg(mul(t, t)), 1.0);
      });
}

Tensor activation(const Tensor& x, Activation kind, double slope) {
  switch (kind) {
    case Activation::relu: return relu(x);
    case Activation::leaky_relu: return leaky_relu(x, slope);
    case Activation::tanh: return tanh(x);
    case Activation::identity: return x;
  }
  return x;
}

Tensor sum(const Tensor& x, unsigned axes) {
  const Shape& s = x.shape();
  Shape out{(axes & kN) ? 1 : s.n, (axes & kC) ? 1 : s.c,
            (axes & kH) ? 1 : s.h, (axes & kW) ? 1 : s.w};
  std::vector<double> r(out.numel(), 0.0);
  auto d = x.data();
  Strides so = broadcast_strides(out, s);
  std::size_t i = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int h = 0; h < s.h; ++h) {
        std::size_t base = n * so.n + c * so.c + h * so.h;
        for (int w = 0; w < s.w; ++w, ++i) r[base + w * so.w] += d[i];
      }
  return make_result(out, std::move(r), "sum", {x},
                     [](const Tensor& g, std::span<const bool>,
                        const std::vector<Tensor>& in) -> std::vector<Tensor> {
                       return {expand(g, in[0].shape())};
                     });
}

Tensor mean(const Tensor& x, unsigned axes) {
  const Shape& s = x.shape();
  double count = 1;
  for (int ax = 0; ax < 4; ++ax)
    if (axes & (1u << ax)) count *= s[ax];
  return scale(sum(x, axes), 1.0 / count);
}

Tensor sum_all(const Tensor& x) { return sum(x, kAll); }

Tensor expand(const Tensor& x, Shape shape) {
  if (x.shape() == shape) return x;
  for (int ax = 0; ax < 4; ++ax) {
    if (x.shape()[ax] != shape[ax] && x.shape()[ax] != 1) {
      throw ShapeError("expand: " + x.shape().str() + " -> " + shape.str() +
                       " along " + axis_name(ax));
    }
  }
  std::vector<double> r(shape.numel());
  auto d = x.data();
  Strides sx = broadcast_strides(x.shape(), shape);
  std::size_t i = 0;
  for (int n = 0; n < shape.n; ++n)
    for (int c = 0; c < shape.c; ++c)
      for (int h = 0; h < shape.h; ++h) {
        std::size_t base = n * sx.n + c * sx.c + h * sx.h;
        for (int w = 0; w < shape.w; ++w, ++i) r[i] = d[base + w * sx.w];
      }
  return make_result(shape, std::move(r), "expand", {x},
                     [](const Tensor& g, std::span<const bool>,
                        const std::vector<Tensor>& in) -> std::vector<Tensor> {
                       return {sum_to(g, in[0].shape())};
                     });
}

Tensor sum_to(const Tensor& x, Shape shape) {
  if (x.shape() == shape) return x;
  unsigned axes = 0;
  for (int ax = 0; ax < 4; ++ax) {
    if (shape[ax] == 1 && x.shape()[ax] != 1) {
      axes |= 1u << ax;
    } else if (shape[ax] != x.shape()[ax]) {
      throw ShapeError("sum_to: " + x.shape().str() + " -> " + shape.str());
    }
  }
  return sum(x, axes);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape.numel() != x.numel()) {
    throw ShapeError("reshape: " + x.shape().str() + " -> " + shape.str());
  }
  if (x.shape() == shape) return x;
  return make_result(shape, std::vector<double>(x.data().begin(), x.data().end()),
                     "reshape", {x},
                     [](const Tensor& g, std::span<const bool>,
                        const std::vector<Tensor>& in) -> std::vector<Tensor> {
                       return {reshape(g, in[0].shape())};
                     });
}

Tensor concat(std::span<const Tensor> xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: empty list");
  if (axis < 0 || axis > 3) throw ShapeError("concat: bad axis");
  Shape base = xs[0].shape();
  int total = 0;
  for (const Tensor& t : xs) {
    for (int ax = 0; ax < 4; ++ax) {
      if (ax != axis && t.shape()[ax] != base[ax]) {
        throw ShapeError("concat: " + t.shape().str() + " vs " + base.str() +
                         " mismatch along " + axis_name(ax));
      }
    }
    total += t.shape()[axis];
  }
  if (xs.size() == 1) return xs[0];
  Shape out = with_axis(base, axis, total);
  std::vector<double> r(out.numel());
  std::size_t outer = outer_extent(base, axis), inner = inner_extent(base, axis);
  std::size_t row = std::size_t(total) * inner;
  std::size_t offset = 0;
  std::vector<int> starts;
  for (const Tensor& t : xs) {
    starts.push_back(static_cast<int>(offset / inner));
    std::size_t block = std::size_t(t.shape()[axis]) * inner;
    auto d = t.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(d.begin() + o * block, block, r.begin() + o * row + offset);
    }
    offset += block;
  }
  std::vector<Tensor> inputs(xs.begin(), xs.end());
  return make_result(
      out, std::move(r), "concat", inputs,
      [axis, starts](const Tensor& g, std::span<const bool> needs,
                     const std::vector<Tensor>& in) -> std::vector<Tensor> {
        std::vector<Tensor> out(in.size());
        for (std::size_t k = 0; k < in.size(); ++k) {
          if (needs[k]) out[k] = narrow(g, axis, starts[k], in[k].shape()[axis]);
        }
        return out;
      });
}

Tensor concat(std::initializer_list<Tensor> xs, int axis) {
  return concat(std::span<const Tensor>(xs.begin(), xs.size()), axis);
}

Tensor channel_concat(std::span<const Tensor> xs) { return concat(xs, 1); }

Tensor narrow(const Tensor& x, int axis, int start, int length) {
  const Shape& s = x.shape();
  if (axis < 0 || axis > 3 || start < 0 || length <= 0 ||
      start + length > s[axis]) {
    throw ShapeError("narrow: [" + std::to_string(start) + ", +" +
                     std::to_string(length) + ") out of " + s.str());
  }
  if (start == 0 && length == s[axis]) return x;
  Shape out = with_axis(s, axis, length);
  std::size_t outer = outer_extent(s, axis), inner = inner_extent(s, axis);
  std::size_t src_row = std::size_t(s[axis]) * inner;
  std::size_t block = std::size_t(length) * inner;
  std::vector<double> r(out.numel());
  auto d = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(d.begin() + o * src_row + start * inner, block,
                r.begin() + o * block);
  }
  int total = s[axis];
  return make_result(out, std::move(r), "narrow", {x},
                     [axis, start, total](const Tensor& g, std::span<const bool>,
                                          const std::vector<Tensor>&)
                         -> std::vector<Tensor> {
                       return {pad(g, axis, start, total)};
                     });
}

Tensor pad(const Tensor& x, int axis, int start, int total) {
  const Shape& s = x.shape();
  if (axis < 0 || axis > 3 || start < 0 || start + s[axis] > total) {
    throw ShapeError("pad: bad extent");
  }
  if (start == 0 && total == s[axis]) return x;
  Shape out = with_axis(s, axis, total);
  std::size_t outer = outer_extent(s, axis), inner = inner_extent(s, axis);
  std::size_t dst_row = std::size_t(total) * inner;
  std::size_t block = std::size_t(s[axis]) * inner;
  std::vector<double> r(out.numel(), 0.0);
  auto d = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(d.begin() + o * block, block,
                r.begin() + o * dst_row + start * inner);
  }
  int length = s[axis];
  return make_result(out, std::move(r), "pad", {x},
                     [axis, start, length](const Tensor& g, std::span<const bool>,
                                           const std::vector<Tensor>&)
                         -> std::vector<Tensor> {
                       return {narrow(g, axis, start, length)};
                     });
}

Tensor interpolate_uniform(const Tensor& a, const Tensor& b, double u) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("interpolate_uniform: " + a.shape().str() + " vs " +
                     b.shape().str());
  }
  return add(scale(a, 1.0 - u), scale(b, u));
}

Tensor interpolate_uniform(const Tensor& a, const Tensor& b, const Tensor& u) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("interpolate_uniform: " + a.shape().str() + " vs " +
                     b.shape().str());
  }
  if (!(u.shape() == Shape{a.shape().n, 1, 1, 1})) {
    throw ShapeError("interpolate_uniform: weights must be " +
                     Shape{a.shape().n, 1, 1, 1}.str());
  }
  return add(mul(a, add_scalar(neg(u), 1.0)), mul(b, u));
}

Tensor gather_index(const Tensor& x, std::vector<int> index, Shape out) {
  if (index.size() != out.numel()) throw ShapeError("gather_index: size");
  auto d = x.data();
  std::vector<double> r(out.numel());
  for (std::size_t k = 0; k < r.size(); ++k) r[k] = d[index[k]];
  return make_result(
      out, std::move(r), "gather_index", {x},
      [index](const Tensor& g, std::span<const bool>,
              const std::vector<Tensor>& in) -> std::vector<Tensor> {
        return {scatter_index(g, index, in[0].shape())};
      });
}

Tensor scatter_index(const Tensor& x, std::vector<int> index, Shape out) {
  if (index.size() != x.numel()) throw ShapeError("scatter_index: size");
  auto d = x.data();
  std::vector<double> r(out.numel(), 0.0);
  for (std::size_t k = 0; k < index.size(); ++k) r[index[k]] += d[k];
  return make_result(
      out, std::move(r), "scatter_index", {x},
      [index](const Tensor& g, std::span<const bool>,
              const std::vector<Tensor>& in) -> std::vector<Tensor> {
        return {gather_index(g, index, in[0].shape())};
      });
}

Tensor max_pool2(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.h % 2 || s.w % 2) {
    throw ShapeError("max_pool2 needs even spatial dims, got " + s.str());
  }
  Shape out{s.n, s.c, s.h / 2, s.w / 2};
  std::vector<int> index(out.numel());
  auto d = x.data();
  std::size_t k = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      std::size_t plane = (std::size_t(n) * s.c + c) * s.h * s.w;
      for (int h = 0; h < out.h; ++h)
        for (int w = 0; w < out.w; ++w, ++k) {
          std::size_t best = plane + std::size_t(2 * h) * s.w + 2 * w;
          const std::size_t cand[3] = {best + 1, best + s.w, best + s.w + 1};
          for (std::size_t ci : cand)
            if (d[ci] > d[best]) best = ci;
          index[k] = static_cast<int>(best);
        }
    }
  return gather_index(x, std::move(index), out);
}

Tensor group_reduce(const Tensor& x, int group, SetReduce mode) {
  const Shape& s = x.shape();
  if (group <= 0 || s.n % group) {
    throw ShapeError("group_reduce: batch " + std::to_string(s.n) +
                     " not divisible by group " + std::to_string(group));
  }
  Shape out{s.n / group, s.c, s.h, s.w};
  std::size_t per = std::size_t(s.c) * s.h * s.w;
  auto d = x.data();
  if (mode == SetReduce::max || mode == SetReduce::min) {
    std::vector<int> index(out.numel());
    for (int b = 0; b < out.n; ++b)
      for (std::size_t e = 0; e < per; ++e) {
        std::size_t best = std::size_t(b) * group * per + e;
        for (int l = 1; l < group; ++l) {
          std::size_t cand = (std::size_t(b) * group + l) * per + e;
          bool better = mode == SetReduce::max ? d[cand] > d[best]
                                               : d[cand] < d[best];
          if (better) best = cand;
        }
        index[b * per + e] = static_cast<int>(best);
      }
    return gather_index(x, std::move(index), out);
  }
  // Mean over distinct values weighted by multiplicity, summed in sorted
  // order: identical bits for any ordering or uniform duplication.
  std::vector<double> r(out.numel());
  std::vector<double> vals(group);
  for (int b = 0; b < out.n; ++b)
    for (std::size_t e = 0; e < per; ++e) {
      for (int l = 0; l < group; ++l) {
        vals[l] = d[(std::size_t(b) * group + l) * per + e] + 0.0;
      }
      std::sort(vals.begin(), vals.end());
      double acc = 0.0;
      for (int l = 0; l < group;) {
        int run = l;
        while (run < group && vals[run] == vals[l]) ++run;
        acc += (static_cast<double>(run - l) / group) * vals[l];
        l = run;
      }
      r[b * per + e] = acc;
    }
  return make_result(out, std::move(r), "group_mean", {x},
                     [group](const Tensor& g, std::span<const bool>,
                             const std::vector<Tensor>&) -> std::vector<Tensor> {
                       return {scale(group_broadcast(g, group), 1.0 / group)};
                     });
}

Tensor set_reduce(std::span<const Tensor> xs, SetReduce mode) {
  if (xs.empty()) throw ShapeError("set_reduce: empty list");
  for (const Tensor& t : xs) {
    if (!(t.shape() == xs[0].shape())) {
      throw ShapeError("set_reduce: " + t.shape().str() + " vs " +
                       xs[0].shape().str());
    }
  }
  int group = static_cast<int>(xs.size());
  int batch = xs[0].shape().n;
  if (batch == 1) return group_reduce(concat(xs, 0), group, mode);
  std::vector<Tensor> rows;
  for (int b = 0; b < batch; ++b) {
    std::vector<Tensor> members;
    for (const Tensor& t : xs) members.push_back(narrow(t, 0, b, 1));
    rows.push_back(group_reduce(concat(members, 0), group, mode));
  }
  return concat(rows, 0);
}

Tensor group_broadcast(const Tensor& x, int group) {
  const Shape& s = x.shape();
  Shape out{s.n * group, s.c, s.h, s.w};
  std::size_t per = std::size_t(s.c) * s.h * s.w;
  std::vector<double> r(out.numel());
  auto d = x.data();
  for (int b = 0; b < s.n; ++b)
    for (int l = 0; l < group; ++l)
      std::copy_n(d.begin() + b * per, per,
                  r.begin() + (std::size_t(b) * group + l) * per);
  return make_result(out, std::move(r), "group_broadcast", {x},
                     [group](const Tensor& g, std::span<const bool>,
                             const std::vector<Tensor>&) -> std::vector<Tensor> {
                       return {group_sum(g, group)};
                     });
}

Tensor group_sum(const Tensor& x, int group) {
  const Shape& s = x.shape();
  if (s.n % group) throw ShapeError("group_sum: batch not divisible");
  Shape out{s.n / group, s.c, s.h, s.w};
  std::size_t per = std::size_t(s.c) * s.h * s.w;
  std::vector<double> r(out.numel(), 0.0);
  auto d = x.data();
  for (int b = 0; b < out.n; ++b)
    for (int l = 0; l < group; ++l)
      for (std::size_t e = 0; e < per; ++e)
        r[b * per + e] += d[(std::size_t(b) * group + l) * per + e];
  return make_result(out, std::move(r), "group_sum", {x},
                     [group](const Tensor& g, std::span<const bool>,
                             const std::vector<Tensor>&) -> std::vector<Tensor> {
                       return {group_broadcast(g, group)};
                     });
}

Tensor channel_covariance(const Tensor& x) {
  const Shape& s = x.shape();
  const int C = s.c;
  const std::size_t P = std::size_t(s.h) * s.w;
  Shape out{s.n, 1, C, C};
  std::vector<double> r(out.numel(), 0.0);
  auto centered = std::make_shared<std::vector<double>>(x.numel());
  auto d = x.data();
  for (int n = 0; n < s.n; ++n) {
    const double* xn = d.data() + std::size_t(n) * C * P;
    double* cn = centered->data() + std::size_t(n) * C * P;
    for (int c = 0; c < C; ++c) {
      double m = 0;
      for (std::size_t p = 0; p < P; ++p) m += xn[c * P + p];
      m /= static_cast<double>(P);
      for (std::size_t p = 0; p < P; ++p) cn[c * P + p] = xn[c * P + p] - m;
    }
    double* rn = r.data() + std::size_t(n) * C * C;
    for (int a = 0; a < C; ++a)
      for (int b = a; b < C; ++b) {
        double acc = 0;
        for (std::size_t p = 0; p < P; ++p) acc += cn[a * P + p] * cn[b * P + p];
        rn[a * C + b] = rn[b * C + a] = acc / static_cast<double>(P);
      }
  }
  return make_result(
      out, std::move(r), "channel_covariance", {x},
      [centered, s](const Tensor& g, std::span<const bool>,
                    const std::vector<Tensor>&) -> std::vector<Tensor> {
        const int C = s.c;
        const std::size_t P = std::size_t(s.h) * s.w;
        std::vector<double> dx(s.numel(), 0.0);
        auto gd = g.data();
        for (int n = 0; n < s.n; ++n) {
          const double* gn = gd.data() + std::size_t(n) * C * C;
          const double* cn = centered->data() + std::size_t(n) * C * P;
          double* dn = dx.data() + std::size_t(n) * C * P;
          for (int a = 0; a < C; ++a)
            for (int b = 0; b < C; ++b) {
              double coef = (gn[a * C + b] + gn[b * C + a]) / static_cast<double>(P);
              if (coef == 0) continue;
              for (std::size_t p = 0; p < P; ++p) dn[a * P + p] += coef * cn[b * P + p];
            }
        }
        return {Tensor(s, std::move(dx))};
      },
      /*higher_order=*/false);
}

Tensor max_const(const Tensor& x, unsigned axes) {
  const Shape& s = x.shape();
  Shape out{(axes & kN) ? 1 : s.n, (axes & kC) ? 1 : s.c,
            (axes & kH) ? 1 : s.h, (axes & kW) ? 1 : s.w};
  std::vector<double> r(out.numel(), -HUGE_VAL);
  auto d = x.data();
  Strides so = broadcast_strides(out, s);
  std::size_t i = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w, ++i) {
          double& slot = r[n * so.n + c * so.c + h * so.h + w * so.w];
          slot = std::max(slot, d[i]);
        }
  return Tensor(out, std::move(r));
}

Tensor log_softmax(const Tensor& logits) {
  Tensor shifted = sub(logits, max_const(logits, kC));
  return sub(shifted, log(sum(exp(shifted), kC)));
}

void check_finite(const Tensor& x, std::string_view what) {
  for (double v : x.data()) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite value in " + std::string(what));
    }
  }
}

}  // namespace gwnet
