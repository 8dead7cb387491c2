#include "fbrs/synthetic.hpp"

#include "fbrs/image_ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fbrs {

std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::kEllipse: return "ellipse";
    case ShapeKind::kPolygon: return "polygon";
    case ShapeKind::kRing: return "ring";
  }
  return "?";
}

namespace {

constexpr double kPi = std::numbers::pi;

struct Shape {
  ShapeMeta meta;
  double axis_ratio = 1, angle = 0, inner = 0;
  std::vector<double> px, py;  // polygon vertices relative to the centre

  bool contains(double y, double x) const {
    const double dy = y - meta.cy, dx = x - meta.cx, r = meta.radius;
    switch (meta.kind) {
      case ShapeKind::kEllipse: {
        const double c = std::cos(angle), s = std::sin(angle);
        const double a = (c * dx + s * dy) / r, b = (-s * dx + c * dy) / (r * axis_ratio);
        return a * a + b * b <= 1.0;
      }
      case ShapeKind::kRing: {
        const double d2 = dx * dx + dy * dy;
        return d2 <= r * r && d2 >= inner * inner * r * r;
      }
      case ShapeKind::kPolygon: {
        bool in = false;
        for (std::size_t i = 0, j = px.size() - 1; i < px.size(); j = i++) {
          if ((py[i] > dy) != (py[j] > dy) && dx < (px[j] - px[i]) * (dy - py[i]) / (py[j] - py[i]) + px[i])
            in = !in;
        }
        return in;
      }
    }
    return false;
  }
};

double uniform(SeededRng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Shape random_shape(int height, int width, SeededRng& rng, const SyntheticOptions& opts) {
  Shape s;
  const int kind = std::uniform_int_distribution<int>(0, 2)(rng);
  s.meta.kind = static_cast<ShapeKind>(kind);
  const double side = std::min(height, width);
  const double r = side * uniform(rng, opts.min_radius, opts.max_radius);
  s.meta.radius = r;
  s.meta.cy = uniform(rng, r + 1, height - r - 1);
  s.meta.cx = uniform(rng, r + 1, width - r - 1);
  s.angle = uniform(rng, 0, kPi);
  s.axis_ratio = uniform(rng, 0.5, 1.0);
  s.inner = uniform(rng, 0.45, 0.7);
  if (s.meta.kind == ShapeKind::kPolygon) {
    const int n = std::uniform_int_distribution<int>(3, 7)(rng);
    const double phase = uniform(rng, 0, 2 * kPi);
    for (int k = 0; k < n; ++k) {
      const double a = phase + 2 * kPi * (k + uniform(rng, -0.3, 0.3)) / n;
      const double rr = r * uniform(rng, 0.6, 1.0);
      s.px.push_back(rr * std::cos(a));
      s.py.push_back(rr * std::sin(a));
    }
  }
  return s;
}

std::array<float, 3> random_color(SeededRng& rng) {
  return {static_cast<float>(uniform(rng, 0.05, 0.95)), static_cast<float>(uniform(rng, 0.05, 0.95)),
          static_cast<float>(uniform(rng, 0.05, 0.95))};
}

double color_distance(const std::array<float, 3>& a, const std::array<float, 3>& b) {
  double d = 0;
  for (int c = 0; c < 3; ++c) d += (a[c] - b[c]) * (a[c] - b[c]);
  return std::sqrt(d);
}

// Background: two colours mixed by a random low-frequency pattern, plus noise.
Tensor<float> textured_background(int height, int width, SeededRng& rng, std::array<float, 3>& mean_color) {
  const auto c0 = random_color(rng), c1 = random_color(rng);
  const int pattern = std::uniform_int_distribution<int>(0, 2)(rng);
  const double freq = uniform(rng, 0.02, 0.12), phi = uniform(rng, 0, kPi), phase = uniform(rng, 0, 2 * kPi);
  const double f2 = uniform(rng, 0.02, 0.08), phase2 = uniform(rng, 0, 2 * kPi);
  const double amp = uniform(rng, 0.2, 0.8);
  std::normal_distribution<double> noise(0.0, 0.03);
  Tensor<float> img(3, height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double t = x * std::cos(phi) + y * std::sin(phi);
      double m = 0;
      if (pattern == 0) m = 0.5 + 0.5 * std::sin(2 * kPi * freq * t + phase);
      else if (pattern == 1) m = t / std::hypot(height, width) + 0.5;
      else m = 0.5 + 0.25 * (std::sin(2 * kPi * f2 * x + phase) + std::sin(2 * kPi * f2 * y + phase2));
      m = std::clamp(amp * m, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) img(c, y, x) = static_cast<float>(c0[c] + m * (c1[c] - c0[c]) + noise(rng));
    }
  }
  for (int c = 0; c < 3; ++c) mean_color[c] = static_cast<float>(c0[c] + 0.5 * amp * (c1[c] - c0[c]));
  return img;
}

}  // namespace

SyntheticSample gen_synthetic_sample(int height, int width, SeededRng& rng, const SyntheticOptions& opts) {
  if (height < 32 || width < 32) throw ContractError("synthetic images must be at least 32x32");
  if (opts.min_shapes < 1 || opts.max_shapes < opts.min_shapes) throw ContractError("bad shape count range");
  if (!(opts.min_radius > 0 && opts.max_radius >= opts.min_radius && opts.max_radius < 0.5))
    throw ContractError("bad radius range");
  const int ss = std::max(1, opts.supersample);
  for (;;) {
    std::array<float, 3> bg_mean{};
    Tensor<float> bg = textured_background(height, width, rng, bg_mean);
    const int n = std::uniform_int_distribution<int>(opts.min_shapes, opts.max_shapes)(rng);
    std::vector<Shape> shapes;
    std::vector<double> shade;
    for (int i = 0; i < n; ++i) {
      auto s = random_shape(height, width, rng, opts);
      auto color = random_color(rng);
      for (int tries = 0; tries < 20 && color_distance(color, bg_mean) < 0.35; ++tries) color = random_color(rng);
      s.meta.color = color;
      shade.push_back(uniform(rng, -0.1, 0.1));
      shapes.push_back(std::move(s));
    }
    const int target = std::uniform_int_distribution<int>(0, n - 1)(rng);
    shapes[target].meta.target = true;

    std::normal_distribution<double> noise(0.0, 0.02);
    Tensor<float> img(3, height, width);
    SyntheticSample out;
    out.gt = BinaryMask(height, width);
    out.others = BinaryMask(height, width);
    const double inv = 1.0 / ss, samples = static_cast<double>(ss * ss);
    std::vector<int> hits(n + 1);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        std::fill(hits.begin(), hits.end(), 0);
        for (int sy = 0; sy < ss; ++sy) {
          for (int sx = 0; sx < ss; ++sx) {
            const double py = y + (sy + 0.5) * inv, pxx = x + (sx + 0.5) * inv;
            int top = n;  // background
            for (int i = n - 1; i >= 0; --i) {
              if (shapes[i].contains(py, pxx)) {
                top = i;
                break;
              }
            }
            ++hits[top];
          }
        }
        for (int c = 0; c < 3; ++c) {
          double v = hits[n] * bg(c, y, x);
          for (int i = 0; i < n; ++i) {
            if (!hits[i]) continue;
            const auto& m = shapes[i].meta;
            const double lit = shade[i] * ((y - m.cy) + (x - m.cx)) / (m.radius + 1.0);
            v += hits[i] * (m.color[c] + lit);
          }
          img(c, y, x) = static_cast<float>(std::clamp(v / samples + noise(rng), 0.0, 1.0));
        }
        int other = 0;
        for (int i = 0; i < n; ++i)
          if (i != target) other += hits[i];
        out.gt(y, x) = 2 * hits[target] >= ss * ss;
        out.others(y, x) = 2 * other >= ss * ss && !out.gt(y, x);
      }
    }
    if (static_cast<int>(out.gt.count()) < opts.min_gt_area) continue;
    out.image = ImageTensor(std::move(img));
    for (const auto& s : shapes) out.meta.push_back(s.meta);
    return out;
  }
}

std::vector<SyntheticSample> gen_synthetic_dataset(int n, int height, int width, std::uint64_t seed,
                                                   const SyntheticOptions& opts) {
  if (n < 1) throw ContractError("dataset size must be >= 1");
  std::vector<SyntheticSample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i)};
    SeededRng rng(seq);
    out.push_back(gen_synthetic_sample(height, width, rng, opts));
  }
  return out;
}

SyntheticSample centered_disk_sample(int height, int width, double radius) {
  const std::array<float, 3> bg{0.35f, 0.42f, 0.48f}, fg{0.88f, 0.30f, 0.22f};
  const double cy = height / 2.0, cx = width / 2.0;
  constexpr int ss = 4;
  Tensor<float> img(3, height, width);
  SyntheticSample out;
  out.gt = BinaryMask(height, width);
  out.others = BinaryMask(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      int in = 0;
      for (int sy = 0; sy < ss; ++sy)
        for (int sx = 0; sx < ss; ++sx) {
          const double dy = y + (sy + 0.5) / ss - cy, dx = x + (sx + 0.5) / ss - cx;
          in += dy * dy + dx * dx <= radius * radius;
        }
      const float a = static_cast<float>(in) / (ss * ss);
      for (int c = 0; c < 3; ++c) img(c, y, x) = bg[c] + a * (fg[c] - bg[c]);
      out.gt(y, x) = 2 * in >= ss * ss;
    }
  }
  out.image = ImageTensor(std::move(img));
  out.meta.push_back(ShapeMeta{ShapeKind::kEllipse, cy, cx, radius, fg, true});
  return out;
}

SyntheticSample apply_augment(const SyntheticSample& s, const AugmentParams& p) {
  if (!(p.scale > 0) || !std::isfinite(p.scale)) throw ContractError("augment scale must be positive");
  Tensor<float> img = s.image.data;
  BinaryMask gt = s.gt, others = s.others;
  auto meta = s.meta;
  const int h = img.height, w = img.width;
  if (p.hflip) {
    img = flip_horizontal(img);
    gt = flip_horizontal(gt);
    others = flip_horizontal(others);
    for (auto& m : meta) m.cx = w - m.cx;
  }
  if (p.vflip) {
    img = flip_vertical(img);
    gt = flip_vertical(gt);
    others = flip_vertical(others);
    for (auto& m : meta) m.cy = h - m.cy;
  }
  const int nh = std::max(32, static_cast<int>(std::lround(h * p.scale)));
  const int nw = std::max(32, static_cast<int>(std::lround(w * p.scale)));
  if (nh != h || nw != w) {
    img = resize_bilinear(img, nh, nw);
    gt = resize_nearest(gt, nh, nw);
    others = resize_nearest(others, nh, nw);
    const double fy = static_cast<double>(nh) / h, fx = static_cast<double>(nw) / w;
    for (auto& m : meta) {
      m.cy *= fy;
      m.cx *= fx;
      m.radius *= std::sqrt(fy * fx);
    }
  }
  SyntheticSample out;
  out.image = ImageTensor(std::move(img));
  out.gt = std::move(gt);
  out.others = std::move(others);
  out.meta = std::move(meta);
  return out;
}

SyntheticSample augment(const SyntheticSample& s, SeededRng& rng, double min_scale, double max_scale,
                        AugmentParams* used) {
  if (!(min_scale > 0 && max_scale >= min_scale)) throw ContractError("bad augment scale range");
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> scale(min_scale, max_scale);
  for (int attempt = 0; attempt < 10; ++attempt) {
    AugmentParams p;
    p.hflip = coin(rng);
    p.vflip = coin(rng);
    p.scale = scale(rng);
    auto out = apply_augment(s, p);
    if (out.gt.any()) {
      if (used) *used = p;
      return out;
    }
  }
  if (used) *used = AugmentParams{};
  return s;
}

SyntheticSample random_crop(const SyntheticSample& s, int height, int width, SeededRng& rng) {
  if (height < 32 || width < 32) throw ContractError("crop must be at least 32x32");
  if (!s.gt.any()) throw ContractError("sample has an empty gt mask");
  const int H = s.image.height(), W = s.image.width();
  Tensor<float> img = s.image.data;
  BinaryMask gt = s.gt, others = s.others;
  if (H < height || W < width) {
    const int ph = std::max(H, height), pw = std::max(W, width);
    Tensor<float> padded(3, ph, pw);
    BinaryMask g(ph, pw), o(ph, pw);
    for (int y = 0; y < ph; ++y)
      for (int x = 0; x < pw; ++x) {
        const int sy = std::min(y, H - 1), sx = std::min(x, W - 1);
        for (int c = 0; c < 3; ++c) padded(c, y, x) = img(c, sy, sx);
        if (y < H && x < W) {
          g(y, x) = gt(y, x);
          o(y, x) = others(y, x);
        }
      }
    img = std::move(padded);
    gt = std::move(g);
    others = std::move(o);
  }
  std::vector<std::size_t> fg;
  for (std::size_t i = 0; i < gt.data.size(); ++i)
    if (gt.data[i]) fg.push_back(i);
  const std::size_t pick = fg[std::uniform_int_distribution<std::size_t>(0, fg.size() - 1)(rng)];
  const int py = static_cast<int>(pick / gt.width), px = static_cast<int>(pick % gt.width);
  const int y0 = std::uniform_int_distribution<int>(std::max(0, py - height + 1), std::min(py, gt.height - height))(rng);
  const int x0 = std::uniform_int_distribution<int>(std::max(0, px - width + 1), std::min(px, gt.width - width))(rng);
  SyntheticSample out;
  out.image = ImageTensor(crop(img, y0, x0, y0 + height, x0 + width));
  out.gt = crop(gt, y0, x0, y0 + height, x0 + width);
  out.others = crop(others, y0, x0, y0 + height, x0 + width);
  out.meta = s.meta;
  for (auto& m : out.meta) {
    m.cy -= y0;
    m.cx -= x0;
  }
  return out;
}

}  // namespace fbrs
