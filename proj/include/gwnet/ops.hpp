#pragma once

#include <span>
#include <vector>

#include "gwnet/tensor.hpp"

// Differentiable primitives. Binary elementwise ops broadcast any dim of
// extent 1. Unless noted, every backward is itself differentiable.
namespace gwnet {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor pow_scalar(const Tensor& x, double p);
Tensor sqrt(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);

enum class Activation { relu, leaky_relu, tanh, identity };
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.2);
Tensor tanh(const Tensor& x);
Tensor activation(const Tensor& x, Activation kind, double slope = 0.2);

/// Sums over the axes in `axes` (Axis bitmask), keeping them as size 1.
Tensor sum(const Tensor& x, unsigned axes);
Tensor mean(const Tensor& x, unsigned axes);
Tensor sum_all(const Tensor& x);
Tensor expand(const Tensor& x, Shape shape);
/// Reduces a broadcast result back to `shape`.
Tensor sum_to(const Tensor& x, Shape shape);
Tensor reshape(const Tensor& x, Shape shape);

/// Concatenation / slicing along axis 0 (batch) or 1 (channels).
Tensor concat(std::span<const Tensor> xs, int axis);
Tensor concat(std::initializer_list<Tensor> xs, int axis);
Tensor narrow(const Tensor& x, int axis, int start, int length);
/// Zero-pads `x` along `axis` into a tensor of extent `total`, placing x at
/// offset `start` (adjoint of narrow).
Tensor pad(const Tensor& x, int axis, int start, int total);
Tensor channel_concat(std::span<const Tensor> xs);

/// (1-u)·a + u·b.
Tensor interpolate_uniform(const Tensor& a, const Tensor& b, double u);
/// Per-sample weights: u has shape (N,1,1,1).
Tensor interpolate_uniform(const Tensor& a, const Tensor& b, const Tensor& u);

/// Direct convolution. w: (out_ch, in_ch, kh, kw); bias optional (out_ch).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              int padding);
/// Transposed convolution (adjoint of conv2d w.r.t. its input).
/// w: (in_ch, out_ch, kh, kw), i.e. the kernel of the conv it inverts.
/// Output extent: (H-1)·stride - 2·padding + k + output_padding.
Tensor deconv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                int stride, int padding, int output_padding);
/// Gradient of conv2d w.r.t. its kernel, as a bilinear op of (x, grad_out).
Tensor conv2d_weight_grad(const Tensor& x, const Tensor& grad_out, int kh,
                          int kw, int stride, int padding);

/// 2x2 max pool with stride 2 (even spatial dims).
Tensor max_pool2(const Tensor& x);
Tensor gather_index(const Tensor& x, std::vector<int> index, Shape out);
Tensor scatter_index(const Tensor& x, std::vector<int> index, Shape out);

enum class SetReduce { avg, max, min };
/// Treats consecutive runs of `group` batch entries as a set and reduces
/// each set elementwise: (B·group, C, H, W) -> (B, C, H, W). The result is
/// bit-exact under permutation and duplication of set members. Ties in
/// max/min route the gradient to the first achieving member.
Tensor group_reduce(const Tensor& x, int group, SetReduce mode);
Tensor set_reduce(std::span<const Tensor> xs, SetReduce mode);
/// (B, ...) -> (B·group, ...) by repeating each entry; adjoint of group_sum.
Tensor group_broadcast(const Tensor& x, int group);
Tensor group_sum(const Tensor& x, int group);

/// Per-sample channel covariance of centered features: (N,C,H,W) ->
/// (N,1,C,C). First-order only.
Tensor channel_covariance(const Tensor& x);

/// Per-row log-softmax over channels of an (N,C,1,1) tensor.
Tensor log_softmax(const Tensor& logits);

/// Constant (no-grad) max over axes.
Tensor max_const(const Tensor& x, unsigned axes);

/// Throws NumericError naming `what` if any element is NaN/Inf.
void check_finite(const Tensor& x, std::string_view what);

}  // namespace gwnet
