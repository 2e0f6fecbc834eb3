#include "gwnet/norm.hpp"

#include <string>

#include "gwnet/ops.hpp"

namespace gwnet {
namespace {

Tensor as_channel_vector(const Tensor& t, int channels, const char* what) {
  if (static_cast<int>(t.numel()) != channels) {
    throw ShapeError(std::string("normalize: ") + what + " has " +
                     std::to_string(t.numel()) + " entries, expected C=" +
                     std::to_string(channels));
  }
  return reshape(t, Shape{1, channels, 1, 1});
}

unsigned stat_axes(NormKind kind) {
  switch (kind) {
    case NormKind::batch: return kN | kH | kW;
    case NormKind::instance: return kH | kW;
    case NormKind::layer: return kC | kH | kW;
    case NormKind::none: break;
  }
  return 0;
}

}  // namespace

const char* to_string(NormKind kind) {
  switch (kind) {
    case NormKind::none: return "none";
    case NormKind::batch: return "batch";
    case NormKind::instance: return "instance";
    case NormKind::layer: return "layer";
  }
  return "?";
}

NormKind norm_kind_from_string(std::string_view name) {
  if (name == "none") return NormKind::none;
  if (name == "batch") return NormKind::batch;
  if (name == "instance") return NormKind::instance;
  if (name == "layer") return NormKind::layer;
  throw std::invalid_argument("unknown normalization '" + std::string(name) + "'");
}

Tensor normalize(const Tensor& x, NormKind kind, const Tensor& gamma,
                 const Tensor& beta, double eps, RunningStats* stats,
                 bool training) {
  if (kind == NormKind::none) return x;
  if (eps <= 0) throw std::invalid_argument("normalize: eps must be > 0");
  const int C = x.shape().c;
  Tensor g = as_channel_vector(gamma, C, "gamma");
  Tensor b = as_channel_vector(beta, C, "beta");
  const unsigned axes = stat_axes(kind);

  Tensor mu, var;
  if (kind == NormKind::batch && stats && !training) {
    mu = stats->mean;
    var = stats->var;
  } else {
    mu = mean(x, axes);
    Tensor xc = sub(x, mu);
    var = mean(mul(xc, xc), axes);
    if (kind == NormKind::batch && stats && training) {
      const double m = stats->momentum;
      auto rm = stats->mean.mutable_data();
      auto rv = stats->var.mutable_data();
      auto bm = mu.data();
      auto bv = var.data();
      for (int c = 0; c < C; ++c) {
        rm[c] = (1 - m) * rm[c] + m * bm[c];
        rv[c] = (1 - m) * rv[c] + m * bv[c];
      }
    }
  }
  Tensor inv = pow_scalar(add_scalar(var, eps), -0.5);
  Tensor xhat = mul(sub(x, mu), inv);
  return add(mul(xhat, g), b);
}

SpatialStats spatial_stats(const Tensor& x, double eps) {
  Tensor mu = mean(x, kSpatial);
  Tensor xc = sub(x, mu);
  Tensor var = mean(mul(xc, xc), kSpatial);
  return {mu, sqrt(add_scalar(var, eps))};
}

Tensor adain_with_stats(const Tensor& content, const SpatialStats& style,
                        double eps) {
  const Shape& cs = content.shape();
  Shape want{cs.n, cs.c, 1, 1};
  if (!(style.mean.shape() == want) || !(style.sigma.shape() == want)) {
    throw ShapeError("adain: style statistics " + style.mean.shape().str() +
                     " do not match content " + cs.str() + " in N and C");
  }
  SpatialStats own = spatial_stats(content, eps);
  Tensor ratio = div(style.sigma, own.sigma);
  return add(mul(content, ratio), sub(style.mean, mul(own.mean, ratio)));
}

Tensor adain(const Tensor& content, const Tensor& style, double eps) {
  const Shape& cs = content.shape();
  const Shape& ss = style.shape();
  if (cs.n != ss.n || cs.c != ss.c) {
    throw ShapeError("adain: content " + cs.str() + " and style " + ss.str() +
                     " must share N and C");
  }
  return adain_with_stats(content, spatial_stats(style, eps), eps);
}

}  // namespace gwnet
