#include <Eigen/Core>

#include "gwnet/ops.hpp"
#include "gwnet/parallel.hpp"

namespace gwnet {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<RowMat>;
using CMapR = Eigen::Map<const RowMat>;

struct Geometry {
  int in_c, in_h, in_w;    // conv input
  int out_h, out_w;        // conv output
  int kh, kw, stride, pad;
  int ckk() const { return in_c * kh * kw; }
  int pixels() const { return out_h * out_w; }
};

// Per-thread column buffer, grown on demand and never cleared: every user
// overwrites the whole range it asks for.
double* scratch(std::size_t n) {
  thread_local std::vector<double> buf;
  if (buf.size() < n) buf.resize(n);
  return buf.data();
}

void im2col(const double* x, const Geometry& g, double* cols) {
  const int P = g.pixels();
  for (int c = 0; c < g.in_c; ++c)
    for (int i = 0; i < g.kh; ++i)
      for (int j = 0; j < g.kw; ++j) {
        double* row = cols + (std::size_t(c * g.kh + i) * g.kw + j) * P;
        for (int oh = 0; oh < g.out_h; ++oh) {
          int ih = oh * g.stride + i - g.pad;
          double* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= g.in_h) {
            std::fill_n(dst, g.out_w, 0.0);
            continue;
          }
          const double* src = x + (std::size_t(c) * g.in_h + ih) * g.in_w;
          for (int ow = 0; ow < g.out_w; ++ow) {
            int iw = ow * g.stride + j - g.pad;
            dst[ow] = (iw >= 0 && iw < g.in_w) ? src[iw] : 0.0;
          }
        }
      }
}

void col2im(const double* cols, const Geometry& g, double* x) {
  const int P = g.pixels();
  for (int c = 0; c < g.in_c; ++c)
    for (int i = 0; i < g.kh; ++i)
      for (int j = 0; j < g.kw; ++j) {
        const double* row = cols + (std::size_t(c * g.kh + i) * g.kw + j) * P;
        for (int oh = 0; oh < g.out_h; ++oh) {
          int ih = oh * g.stride + i - g.pad;
          if (ih < 0 || ih >= g.in_h) continue;
          double* dst = x + (std::size_t(c) * g.in_h + ih) * g.in_w;
          const double* src = row + oh * g.out_w;
          for (int ow = 0; ow < g.out_w; ++ow) {
            int iw = ow * g.stride + j - g.pad;
            if (iw >= 0 && iw < g.in_w) dst[iw] += src[ow];
          }
        }
      }
}

void check_bias(const Tensor& bias, int channels, const char* op) {
  if (bias.defined() && static_cast<int>(bias.numel()) != channels) {
    throw ShapeError(std::string(op) + ": bias has " +
                     std::to_string(bias.numel()) + " entries, expected " +
                     std::to_string(channels));
  }
}

void add_bias(std::vector<double>& out, const Tensor& bias, const Shape& s) {
  if (!bias.defined()) return;
  auto b = bias.data();
  const std::size_t plane = std::size_t(s.h) * s.w;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      double* p = out.data() + (std::size_t(n) * s.c + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) p[k] += b[c];
    }
}

Tensor bias_grad(const Tensor& g, const Tensor& bias) {
  return reshape(sum(g, kN | kH | kW), bias.shape());
}

Tensor deconv_sized(const Tensor& x, const Tensor& w, const Tensor& bias,
                    int stride, int pad, int out_h, int out_w);

// The conv whose input is (N, w.c, H, W) and output x's spatial extent.
Tensor conv_forward(const Tensor& x, const Tensor& w, const Tensor& bias,
                    int stride, int pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (stride <= 0 || pad < 0) {
    throw ShapeError("conv2d: stride must be positive and padding >= 0");
  }
  if (xs.c != ws.c) {
    throw ShapeError("conv2d: input has C=" + std::to_string(xs.c) +
                     " but kernel expects in_ch=" + std::to_string(ws.c));
  }
  if (xs.h + 2 * pad < ws.h || xs.w + 2 * pad < ws.w) {
    throw ShapeError("conv2d: padded input H/W " + std::to_string(xs.h + 2 * pad) +
                     "x" + std::to_string(xs.w + 2 * pad) +
                     " smaller than kernel " + std::to_string(ws.h) + "x" +
                     std::to_string(ws.w));
  }
  check_bias(bias, ws.n, "conv2d");
  Geometry g{xs.c, xs.h, xs.w, (xs.h + 2 * pad - ws.h) / stride + 1,
             (xs.w + 2 * pad - ws.w) / stride + 1, ws.h, ws.w, stride, pad};
  Shape out{xs.n, ws.n, g.out_h, g.out_w};
  std::vector<double> r(out.numel());
  const int O = ws.n, K = g.ckk(), P = g.pixels();
  CMapR wm(w.data().data(), O, K);
  auto xd = x.data();
  parallel_for(xs.n, [&](int n) {
    double* cols = scratch(std::size_t(K) * P);
    im2col(xd.data() + std::size_t(n) * xs.c * xs.h * xs.w, g, cols);
    MapR(r.data() + std::size_t(n) * O * P, O, P).noalias() =
        wm * CMapR(cols, K, P);
  });
  add_bias(r, bias, out);
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(
      out, std::move(r), "conv2d", inputs,
      [stride, pad](const Tensor& go, std::span<const bool> needs,
                    const std::vector<Tensor>& in) -> std::vector<Tensor> {
        std::vector<Tensor> gr(in.size());
        const Shape& xs = in[0].shape();
        const Shape& ws = in[1].shape();
        if (needs[0]) gr[0] = deconv_sized(go, in[1], Tensor(), stride, pad, xs.h, xs.w);
        if (needs[1]) gr[1] = conv2d_weight_grad(in[0], go, ws.h, ws.w, stride, pad);
        if (in.size() > 2 && needs[2]) gr[2] = bias_grad(go, in[2]);
        return gr;
      });
}

Tensor deconv_sized(const Tensor& x, const Tensor& w, const Tensor& bias,
                    int stride, int pad, int out_h, int out_w) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.c != ws.n) {
    throw ShapeError("deconv2d: input has C=" + std::to_string(xs.c) +
                     " but kernel expects in_ch=" + std::to_string(ws.n));
  }
  check_bias(bias, ws.c, "deconv2d");
  // Geometry of the adjoint conv: input (ws.c, out_h, out_w) -> x's extent.
  Geometry g{ws.c, out_h, out_w, xs.h, xs.w, ws.h, ws.w, stride, pad};
  if ((out_h + 2 * pad - ws.h) / stride + 1 != xs.h ||
      (out_w + 2 * pad - ws.w) / stride + 1 != xs.w) {
    throw ShapeError("deconv2d: output " + std::to_string(out_h) + "x" +
                     std::to_string(out_w) + " inconsistent with input " +
                     xs.str());
  }
  Shape out{xs.n, ws.c, out_h, out_w};
  std::vector<double> r(out.numel(), 0.0);
  const int Cin = ws.n, K = g.ckk(), P = g.pixels();
  CMapR wm(w.data().data(), Cin, K);
  auto xd = x.data();
  parallel_for(xs.n, [&](int n) {
    double* cols = scratch(std::size_t(K) * P);
    MapR(cols, K, P).noalias() =
        wm.transpose() * CMapR(xd.data() + std::size_t(n) * Cin * P, Cin, P);
    col2im(cols, g, r.data() + std::size_t(n) * out.c * out_h * out_w);
  });
  add_bias(r, bias, out);
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(
      out, std::move(r), "deconv2d", inputs,
      [stride, pad](const Tensor& go, std::span<const bool> needs,
                    const std::vector<Tensor>& in) -> std::vector<Tensor> {
        std::vector<Tensor> gr(in.size());
        const Shape& ws = in[1].shape();
        if (needs[0]) gr[0] = conv_forward(go, in[1], Tensor(), stride, pad);
        if (needs[1]) gr[1] = conv2d_weight_grad(go, in[0], ws.h, ws.w, stride, pad);
        if (in.size() > 2 && needs[2]) gr[2] = bias_grad(go, in[2]);
        return gr;
      });
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              int padding) {
  return conv_forward(x, w, bias, stride, padding);
}

Tensor deconv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                int stride, int padding, int output_padding) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (output_padding < 0 || output_padding >= stride) {
    throw ShapeError("deconv2d: output_padding must lie in [0, stride)");
  }
  int oh = (xs.h - 1) * stride - 2 * padding + ws.h + output_padding;
  int ow = (xs.w - 1) * stride - 2 * padding + ws.w + output_padding;
  if (oh <= 0 || ow <= 0) throw ShapeError("deconv2d: empty output");
  return deconv_sized(x, w, bias, stride, padding, oh, ow);
}

Tensor conv2d_weight_grad(const Tensor& x, const Tensor& grad_out, int kh,
                          int kw, int stride, int padding) {
  const Shape& xs = x.shape();
  const Shape& gs = grad_out.shape();
  Geometry g{xs.c, xs.h, xs.w, gs.h, gs.w, kh, kw, stride, padding};
  if (gs.n != xs.n || (xs.h + 2 * padding - kh) / stride + 1 != gs.h ||
      (xs.w + 2 * padding - kw) / stride + 1 != gs.w) {
    throw ShapeError("conv2d_weight_grad: grad " + gs.str() +
                     " inconsistent with input " + xs.str());
  }
  const int O = gs.c, K = g.ckk(), P = g.pixels();
  Shape out{O, xs.c, kh, kw};
  std::vector<double> r(out.numel(), 0.0);
  MapR acc(r.data(), O, K);
  auto xd = x.data();
  auto gd = grad_out.data();
  double* cols = scratch(std::size_t(K) * P);
  for (int n = 0; n < xs.n; ++n) {
    im2col(xd.data() + std::size_t(n) * xs.c * xs.h * xs.w, g, cols);
    acc.noalias() += CMapR(gd.data() + std::size_t(n) * O * P, O, P) *
                     CMapR(cols, K, P).transpose();
  }
  return make_result(
      out, std::move(r), "conv2d_weight_grad", {x, grad_out},
      [stride, padding](const Tensor& gw, std::span<const bool> needs,
                        const std::vector<Tensor>& in) -> std::vector<Tensor> {
        std::vector<Tensor> gr(2);
        const Shape& xs = in[0].shape();
        if (needs[0]) gr[0] = deconv_sized(in[1], gw, Tensor(), stride, padding, xs.h, xs.w);
        if (needs[1]) gr[1] = conv_forward(in[0], gw, Tensor(), stride, padding);
        return gr;
      });
}

}  // namespace gwnet
