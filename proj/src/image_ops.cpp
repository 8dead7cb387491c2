#include "fbrs/image_ops.hpp"

#include <algorithm>
#include <cmath>

namespace fbrs {

void validate_image(const Tensor<float>& t) {
  if (t.channels != 3) throw ContractError("image must have exactly 3 channels");
  if (t.height < 32 || t.width < 32) throw ContractError("image must be at least 32x32");
  for (float v : t.data) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f)
      throw ContractError("image values must be finite and within [0,1]");
  }
}

Tensor<float> Logits::prob() const {
  Tensor<float> p(1, data.height, data.width);
  for (std::size_t i = 0; i < data.size(); ++i) p.data[i] = static_cast<float>(sigmoid(data.data[i]));
  return p;
}

BinaryMask Logits::mask(float threshold) const {
  BinaryMask m(data.height, data.width);
  if (threshold == 0.5f) {
    for (std::size_t i = 0; i < data.size(); ++i) m.data[i] = data.data[i] > 0.0f;
  } else {
    for (std::size_t i = 0; i < data.size(); ++i) m.data[i] = sigmoid(data.data[i]) > threshold;
  }
  return m;
}

ResampleAxis make_resample_axis(int in_size, int out_size) {
  ResampleAxis ax;
  ax.lo.resize(out_size);
  ax.hi.resize(out_size);
  ax.frac.resize(out_size);
  const double ratio = static_cast<double>(in_size) / out_size;
  for (int i = 0; i < out_size; ++i) {
    double src = (i + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    int lo = static_cast<int>(std::floor(src));
    if (lo > in_size - 1) lo = in_size - 1;
    const int hi = std::min(lo + 1, in_size - 1);
    double f = src - lo;
    if (hi == lo) f = 0.0;
    ax.lo[i] = lo;
    ax.hi[i] = hi;
    ax.frac[i] = f;
  }
  return ax;
}

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& in, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw ContractError("resize target must be positive");
  if (in.height == out_h && in.width == out_w) return in;
  const ResampleAxis ay = make_resample_axis(in.height, out_h);
  const ResampleAxis ax = make_resample_axis(in.width, out_w);
  Tensor<T> out(in.channels, out_h, out_w);
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < out_h; ++y) {
      const T fy = static_cast<T>(ay.frac[y]);
      const int y0 = ay.lo[y], y1 = ay.hi[y];
      for (int x = 0; x < out_w; ++x) {
        const T fx = static_cast<T>(ax.frac[x]);
        const int x0 = ax.lo[x], x1 = ax.hi[x];
        const T a = in(c, y0, x0), b = in(c, y0, x1);
        const T d = in(c, y1, x0), e = in(c, y1, x1);
        const T top = a + fx * (b - a);
        const T bot = d + fx * (e - d);
        out(c, y, x) = top + fy * (bot - top);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> resize_bilinear_adjoint(const Tensor<T>& g, int in_h, int in_w) {
  if (g.height == in_h && g.width == in_w) return g;
  const ResampleAxis ay = make_resample_axis(in_h, g.height);
  const ResampleAxis ax = make_resample_axis(in_w, g.width);
  Tensor<T> out(g.channels, in_h, in_w);
  for (int c = 0; c < g.channels; ++c) {
    for (int y = 0; y < g.height; ++y) {
      const T fy = static_cast<T>(ay.frac[y]);
      const int y0 = ay.lo[y], y1 = ay.hi[y];
      for (int x = 0; x < g.width; ++x) {
        const T fx = static_cast<T>(ax.frac[x]);
        const int x0 = ax.lo[x], x1 = ax.hi[x];
        const T v = g(c, y, x);
        const T top = v * (T(1) - fy);
        const T bot = v * fy;
        out(c, y0, x0) += top * (T(1) - fx);
        out(c, y0, x1) += top * fx;
        out(c, y1, x0) += bot * (T(1) - fx);
        out(c, y1, x1) += bot * fx;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> crop(const Tensor<T>& in, int y0, int x0, int y1, int x1) {
  if (y0 < 0 || x0 < 0 || y1 > in.height || x1 > in.width || y0 >= y1 || x0 >= x1)
    throw ContractError("crop rectangle out of bounds");
  Tensor<T> out(in.channels, y1 - y0, x1 - x0);
  for (int c = 0; c < in.channels; ++c)
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) out(c, y - y0, x - x0) = in(c, y, x);
  return out;
}

BinaryMask crop(const BinaryMask& in, int y0, int x0, int y1, int x1) {
  if (y0 < 0 || x0 < 0 || y1 > in.height || x1 > in.width || y0 >= y1 || x0 >= x1)
    throw ContractError("crop rectangle out of bounds");
  BinaryMask out(y1 - y0, x1 - x0);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) out(y - y0, x - x0) = in(y, x);
  return out;
}

BinaryMask resize_nearest(const BinaryMask& in, int out_h, int out_w) {
  BinaryMask out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const int sy = std::min(in.height - 1, static_cast<int>((y + 0.5) * in.height / out_h));
    for (int x = 0; x < out_w; ++x) {
      const int sx = std::min(in.width - 1, static_cast<int>((x + 0.5) * in.width / out_w));
      out(y, x) = in(sy, sx);
    }
  }
  return out;
}

template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& in) {
  Tensor<T> out(in.channels, in.height, in.width);
  for (int c = 0; c < in.channels; ++c)
    for (int y = 0; y < in.height; ++y)
      for (int x = 0; x < in.width; ++x) out(c, y, x) = in(c, y, in.width - 1 - x);
  return out;
}

template <typename T>
Tensor<T> flip_vertical(const Tensor<T>& in) {
  Tensor<T> out(in.channels, in.height, in.width);
  for (int c = 0; c < in.channels; ++c)
    for (int y = 0; y < in.height; ++y)
      for (int x = 0; x < in.width; ++x) out(c, y, x) = in(c, in.height - 1 - y, x);
  return out;
}

BinaryMask flip_horizontal(const BinaryMask& in) {
  BinaryMask out(in.height, in.width);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) out(y, x) = in(y, in.width - 1 - x);
  return out;
}

BinaryMask flip_vertical(const BinaryMask& in) {
  BinaryMask out(in.height, in.width);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) out(y, x) = in(in.height - 1 - y, x);
  return out;
}

bool mask_bbox(const BinaryMask& m, int& y0, int& x0, int& y1, int& x1) {
  y0 = m.height;
  x0 = m.width;
  y1 = -1;
  x1 = -1;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (!m(y, x)) continue;
      y0 = std::min(y0, y);
      x0 = std::min(x0, x);
      y1 = std::max(y1, y);
      x1 = std::max(x1, x);
    }
  }
  if (y1 < 0) return false;
  ++y1;
  ++x1;
  return true;
}

template Tensor<float> resize_bilinear(const Tensor<float>&, int, int);
template Tensor<double> resize_bilinear(const Tensor<double>&, int, int);
template Tensor<float> resize_bilinear_adjoint(const Tensor<float>&, int, int);
template Tensor<double> resize_bilinear_adjoint(const Tensor<double>&, int, int);
template Tensor<float> crop(const Tensor<float>&, int, int, int, int);
template Tensor<double> crop(const Tensor<double>&, int, int, int, int);
template Tensor<float> flip_horizontal(const Tensor<float>&);
template Tensor<float> flip_vertical(const Tensor<float>&);

}  // namespace fbrs
