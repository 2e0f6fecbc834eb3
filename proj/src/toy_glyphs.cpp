#include "gwnet/toy_glyphs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

namespace gwnet {
namespace {

struct Pt {
  double x, y;
};
using Stroke = std::vector<Pt>;

struct StyleParams {
  double weight;    // stroke width in px at 64x64
  double shear;     // x += shear * (0.5 - y)
  double sx, sy;    // scale about the centre
  double rot;       // radians
  double dx, dy;    // offset, unit coords
  double nib;       // pen angle
  double contrast;  // 0 = monoline
  double wobble;    // amplitude, unit coords
  double phase;
};

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  // std::uniform_real_distribution is implementation-defined; keep the
  // corpus identical across standard libraries.
  return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

int pick(std::mt19937_64& rng, int n) { return static_cast<int>(rng() % static_cast<std::uint64_t>(n)); }

std::vector<Stroke> content_strokes(std::uint64_t seed, int j) {
  std::mt19937_64 rng(mix(seed, 0x1000 + j));
  auto lattice = [&]() {
    return Pt{0.2 + 0.15 * pick(rng, 5), 0.2 + 0.15 * pick(rng, 5)};
  };
  const int count = 2 + pick(rng, 3);
  std::vector<Stroke> strokes;
  for (int k = 0; k < count; ++k) {
    Stroke s;
    switch (pick(rng, 3)) {
      case 0: {  // straight bar
        Pt a = lattice(), b = lattice();
        while (std::hypot(a.x - b.x, a.y - b.y) < 0.25) b = lattice();
        for (int t = 0; t <= 12; ++t) {
          double u = t / 12.0;
          s.push_back({a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)});
        }
        break;
      }
      case 1: {  // arc
        Pt c{0.35 + 0.3 * uniform(rng, 0, 1), 0.35 + 0.3 * uniform(rng, 0, 1)};
        double r = uniform(rng, 0.12, 0.28);
        double a0 = uniform(rng, 0, 2 * std::numbers::pi);
        double sweep = uniform(rng, 0.6, 1.6) * std::numbers::pi;
        for (int t = 0; t <= 20; ++t) {
          double a = a0 + sweep * t / 20.0;
          s.push_back({c.x + r * std::cos(a), c.y + r * std::sin(a)});
        }
        break;
      }
      default: {  // hooked stroke: bar with a short turn at the end
        Pt a = lattice(), b = lattice();
        while (std::hypot(a.x - b.x, a.y - b.y) < 0.3) b = lattice();
        for (int t = 0; t <= 10; ++t) {
          double u = t / 10.0;
          s.push_back({a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)});
        }
        double dir = std::atan2(b.y - a.y, b.x - a.x) + (pick(rng, 2) ? 2.3 : -2.3);
        for (int t = 1; t <= 4; ++t) {
          s.push_back({b.x + 0.03 * t * std::cos(dir), b.y + 0.03 * t * std::sin(dir)});
        }
        break;
      }
    }
    for (Pt& p : s) {
      p.x = std::clamp(p.x, 0.1, 0.9);
      p.y = std::clamp(p.y, 0.1, 0.9);
    }
    strokes.push_back(std::move(s));
  }
  return strokes;
}

StyleParams writer_style(std::uint64_t seed, int style) {
  std::mt19937_64 rng(mix(seed, 0x2000 + style));
  StyleParams p;
  p.weight = uniform(rng, 2.0, 4.8);
  p.shear = uniform(rng, -0.35, 0.35);
  p.sx = uniform(rng, 0.72, 1.0);
  p.sy = uniform(rng, 0.72, 1.0);
  p.rot = uniform(rng, -0.12, 0.12);
  p.dx = uniform(rng, -0.05, 0.05);
  p.dy = uniform(rng, -0.05, 0.05);
  p.nib = uniform(rng, 0, std::numbers::pi);
  p.contrast = uniform(rng, 0.0, 0.7);
  p.wobble = uniform(rng, 0.0, 0.02);
  p.phase = uniform(rng, 0, 2 * std::numbers::pi);
  return p;
}

StyleParams prototype_font(int m) {
  // Clean, upright faces that differ in weight and proportion.
  static const StyleParams fonts[] = {
      {2.6, 0.0, 0.95, 0.95, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0},
      {4.2, 0.0, 0.9, 0.9, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0},
      {2.2, 0.0, 0.8, 1.0, 0.0, 0.0, 0.0, 0.5, 0.6, 0.0, 0.0},
      {3.2, 0.15, 0.9, 0.9, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0},
      {1.8, 0.0, 1.0, 0.85, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0},
  };
  constexpr int count = sizeof(fonts) / sizeof(fonts[0]);
  StyleParams p = fonts[m % count];
  p.weight += 0.4 * (m / count);
  return p;
}

Pt warp(Pt q, const StyleParams& s) {
  double x = q.x - 0.5, y = q.y - 0.5;
  x += s.wobble * std::sin(9.0 * q.y + s.phase);
  y += s.wobble * std::sin(7.0 * q.x + 1.7 * s.phase);
  x += s.shear * (-y);
  x *= s.sx;
  y *= s.sy;
  double c = std::cos(s.rot), sn = std::sin(s.rot);
  return {c * x - sn * y + 0.5 + s.dx, sn * x + c * y + 0.5 + s.dy};
}

GlyphImage render(const std::vector<Stroke>& strokes, const StyleParams& style,
                  int size, int style_id, int content_id) {
  struct Seg {
    Pt a, b;
    double half;
  };
  const double px = size;
  std::vector<Seg> segs;
  for (const Stroke& s : strokes) {
    for (std::size_t k = 0; k + 1 < s.size(); ++k) {
      Pt a = warp(s[k], style), b = warp(s[k + 1], style);
      a = {a.x * px, a.y * px};
      b = {b.x * px, b.y * px};
      double dir = std::atan2(b.y - a.y, b.x - a.x);
      double w = style.weight * (size / 64.0) *
                 (1.0 - style.contrast + style.contrast * std::fabs(std::sin(dir - style.nib)));
      segs.push_back({a, b, 0.5 * std::max(w, 1.0)});
    }
  }
  GlyphImage g;
  g.size = size;
  g.style_id = style_id;
  g.content_id = content_id;
  g.pixels.resize(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      Pt p{x + 0.5, y + 0.5};
      double ink = 0.0;
      for (const Seg& s : segs) {
        double vx = s.b.x - s.a.x, vy = s.b.y - s.a.y;
        double len2 = vx * vx + vy * vy;
        double t = len2 > 0 ? std::clamp(((p.x - s.a.x) * vx + (p.y - s.a.y) * vy) / len2, 0.0, 1.0) : 0.0;
        double d = std::hypot(p.x - (s.a.x + t * vx), p.y - (s.a.y + t * vy));
        ink = std::max(ink, std::clamp(s.half + 0.5 - d, 0.0, 1.0));
      }
      // quantize so packs survive an 8-bit round trip unchanged
      double v = 1.0 - 2.0 * ink;
      g.pixels[std::size_t(y) * size + x] = pixel_from_byte(byte_from_pixel(v));
    }
  }
  return g;
}

}  // namespace

GlyphPack make_toy_pack(std::uint64_t seed, int I, int J, const ToyOptions& opt) {
  if (I < 1 || J < 2) throw std::invalid_argument("toy pack needs I >= 1 and J >= 2");
  if (opt.M < 1 || opt.holdout < 0) throw std::invalid_argument("toy pack needs M >= 1");
  if (opt.size != 64 && opt.size != 32) throw std::invalid_argument("toy pack size must be 64 or 32");
  PackManifest m;
  m.I = I;
  m.J = J;
  m.size = opt.size;
  for (int h = 0; h < opt.holdout; ++h) m.holdout_styles.push_back(I + 1 + h);
  for (int k = 0; k < opt.M; ++k) m.prototype_styles.push_back(I + opt.holdout + 1 + k);
  for (int j = 1; j <= J; ++j) m.charset.push_back("toy" + std::to_string(j));
  GlyphPack pack(m);
  for (int j = 1; j <= J; ++j) {
    std::vector<Stroke> strokes = content_strokes(seed, j);
    for (int i = 1; i <= I + opt.holdout; ++i) {
      pack.add(render(strokes, writer_style(seed, i), opt.size, i, j));
    }
    for (int k = 0; k < opt.M; ++k) {
      pack.add(render(strokes, prototype_font(k), opt.size, m.prototype_styles[k], j));
    }
  }
  pack.validate();
  return pack;
}

}  // namespace gwnet
