#pragma once

#include "gwnet/tensor.hpp"

namespace gwnet {

inline constexpr double kNormEps = 1e-5;

enum class NormKind { none, batch, instance, layer };

const char* to_string(NormKind kind);
NormKind norm_kind_from_string(std::string_view name);

/// Running statistics kept by batch norm for inference, shape (1,C,1,1).
struct RunningStats {
  Tensor mean;
  Tensor var;
  double momentum = 0.1;
};

/// Normalizes x and applies the per-channel affine gamma·x̂ + beta.
///   batch:    stats per channel over (N,H,W)
///   instance: stats per (n,c) over (H,W)
///   layer:    stats per n over (C,H,W)
/// gamma/beta hold C entries. Batch norm in training mode updates `stats`;
/// outside training it normalizes with them.
Tensor normalize(const Tensor& x, NormKind kind, const Tensor& gamma,
                 const Tensor& beta, double eps = kNormEps,
                 RunningStats* stats = nullptr, bool training = true);

/// Per-(n,c) spatial mean and sqrt(var + eps), each (N,C,1,1).
struct SpatialStats {
  Tensor mean;
  Tensor sigma;
};
SpatialStats spatial_stats(const Tensor& x, double eps = kNormEps);

/// AdaIN(content, style) = sigma(style)·(content - mu(content))/sigma(content)
/// + mu(style), statistics per (n,c) over spatial positions. Content and
/// style must agree on N and C; spatial extents may differ. Evaluated as
/// r·content + (mu_s - r·mu_c) with r = sigma_s/sigma_c so that identical
/// statistics reproduce the content bit for bit.
Tensor adain(const Tensor& content, const Tensor& style, double eps = kNormEps);
Tensor adain_with_stats(const Tensor& content, const SpatialStats& style,
                        double eps = kNormEps);

}  // namespace gwnet
