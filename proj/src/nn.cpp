#include "fbrs/nn.hpp"

#include "fbrs/image_ops.hpp"

#include <Eigen/Core>

#include <algorithm>

namespace fbrs::nn {

int ParamStore::add(std::string name, std::vector<int> shape, bool backbone) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  params_.push_back(Param{std::move(name), std::move(shape), std::vector<float>(n, 0.0f), backbone});
  return static_cast<int>(params_.size() - 1);
}

const Param* ParamStore::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

Param* ParamStore::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

std::size_t ParamStore::total_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

ParamGrads::ParamGrads(const ParamStore& store) {
  values.reserve(store.size());
  for (const auto& p : store) values.emplace_back(p.value.size(), 0.0);
}

void ParamGrads::zero() {
  for (auto& v : values) std::fill(v.begin(), v.end(), 0.0);
}

void ParamGrads::add(const ParamGrads& other) {
  for (std::size_t i = 0; i < values.size(); ++i)
    for (std::size_t j = 0; j < values[i].size(); ++j) values[i][j] += other.values[i][j];
}

ConvLayer make_conv(ParamStore& store, const std::string& name, int in, int out, int kernel,
                    int stride, int dilation, int groups, bool bias, bool backbone) {
  ConvLayer l;
  l.in = in;
  l.out = out;
  l.kernel = kernel;
  l.stride = stride;
  l.dilation = dilation;
  l.groups = groups;
  l.pad = dilation * (kernel - 1) / 2;
  l.weight = store.add(name + ".weight", {out, in / groups, kernel, kernel}, backbone);
  if (bias) l.bias = store.add(name + ".bias", {out}, backbone);
  return l;
}

namespace {

// Output columns [lo, hi) whose input column ox*s + off lies inside [0, in_w).
inline void valid_range(int off, int stride, int in_size, int out_size, int& lo, int& hi) {
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  const int last = in_size - 1 - off;  // need ox*s <= last
  hi = last < 0 ? 0 : std::min(out_size, last / stride + 1);
  if (lo > hi) lo = hi;
}


template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Mat<T>>;

// Rows: (ic, ky, kx); columns: output pixels.
template <typename T>
void im2col(const Tensor<T>& x, const ConvLayer& l, int oh, int ow, Mat<T>& col) {
  const int k = l.kernel, s = l.stride, d = l.dilation;
  col.setZero(static_cast<Eigen::Index>(l.in) * k * k, static_cast<Eigen::Index>(oh) * ow);
  for (int ic = 0; ic < l.in; ++ic) {
    const T* xp = x.plane(ic).data();
    for (int ky = 0; ky < k; ++ky) {
      int oy_lo, oy_hi;
      valid_range(ky * d - l.pad, s, x.height, oh, oy_lo, oy_hi);
      for (int kx = 0; kx < k; ++kx) {
        T* row = col.row((static_cast<Eigen::Index>(ic) * k + ky) * k + kx).data();
        const int offx = kx * d - l.pad;
        int ox_lo, ox_hi;
        valid_range(offx, s, x.width, ow, ox_lo, ox_hi);
        for (int oy = oy_lo; oy < oy_hi; ++oy) {
          const int iy = oy * s + ky * d - l.pad;
          const T* xrow = xp + static_cast<std::size_t>(iy) * x.width + offx;
          T* crow = row + static_cast<std::size_t>(oy) * ow;
          for (int ox = ox_lo; ox < ox_hi; ++ox) crow[ox] = xrow[ox * s];
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const Mat<T>& col, const ConvLayer& l, int oh, int ow, Tensor<T>& gx) {
  const int k = l.kernel, s = l.stride, d = l.dilation;
  for (int ic = 0; ic < l.in; ++ic) {
    T* gp = gx.plane(ic).data();
    for (int ky = 0; ky < k; ++ky) {
      int oy_lo, oy_hi;
      valid_range(ky * d - l.pad, s, gx.height, oh, oy_lo, oy_hi);
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col.row((static_cast<Eigen::Index>(ic) * k + ky) * k + kx).data();
        const int offx = kx * d - l.pad;
        int ox_lo, ox_hi;
        valid_range(offx, s, gx.width, ow, ox_lo, ox_hi);
        for (int oy = oy_lo; oy < oy_hi; ++oy) {
          const int iy = oy * s + ky * d - l.pad;
          T* grow = gp + static_cast<std::size_t>(iy) * gx.width + offx;
          const T* crow = row + static_cast<std::size_t>(oy) * ow;
          for (int ox = ox_lo; ox < ox_hi; ++ox) grow[ox * s] += crow[ox];
        }
      }
    }
  }
}

template <typename T>
Mat<T> weight_matrix(const ConvLayer& l, const ParamStore& params) {
  const auto& w = params[l.weight].value;
  const Eigen::Index cols = static_cast<Eigen::Index>(l.in) * l.kernel * l.kernel;
  return Eigen::Map<const Mat<float>>(w.data(), l.out, cols).template cast<T>();
}

template <typename T>
void dense_conv_backward(const Tensor<T>& x, const ConvLayer& l, const ParamStore& params, const Tensor<T>& gy,
                         Tensor<T>* gx, std::vector<double>* gw, std::vector<double>* gb) {
  const int oh = gy.height, ow = gy.width;
  const Eigen::Index npix = static_cast<Eigen::Index>(oh) * ow;
  ConstMatMap<T> dy(gy.data.data(), l.out, npix);
  if (gb) {
    for (int oc = 0; oc < l.out; ++oc) (*gb)[oc] += static_cast<double>(dy.row(oc).sum());
  }
  const bool pointwise = l.kernel == 1 && l.stride == 1;
  Mat<T> col;
  if (gw) {
    Mat<T> dw;
    if (pointwise) {
      dw.noalias() = dy * ConstMatMap<T>(x.data.data(), l.in, npix).transpose();
    } else {
      im2col(x, l, oh, ow, col);
      dw.noalias() = dy * col.transpose();
    }
    for (Eigen::Index i = 0; i < dw.size(); ++i) (*gw)[i] += static_cast<double>(dw.data()[i]);
  }
  if (gx) {
    const Mat<T> w = weight_matrix<T>(l, params);
    if (pointwise) {
      MatMap<T> dx(gx->data.data(), l.in, npix);
      dx.noalias() += w.transpose() * dy;
    } else {
      Mat<T> dcol;
      dcol.noalias() = w.transpose() * dy;
      col2im_add(dcol, l, oh, ow, *gx);
    }
  }
}

template <typename T>
void dense_conv_forward(const Tensor<T>& x, const ConvLayer& l, const ParamStore& params, Tensor<T>& y) {
  const int oh = y.height, ow = y.width;
  const Eigen::Index npix = static_cast<Eigen::Index>(oh) * ow;
  const Mat<T> w = weight_matrix<T>(l, params);
  MatMap<T> out(y.data.data(), l.out, npix);
  if (l.kernel == 1 && l.stride == 1) {
    out.noalias() = w * ConstMatMap<T>(x.data.data(), l.in, npix);
  } else {
    Mat<T> col;
    im2col(x, l, oh, ow, col);
    out.noalias() = w * col;
  }
  if (l.bias >= 0) {
    const auto& b = params[l.bias].value;
    for (int oc = 0; oc < l.out; ++oc) out.row(oc).array() += static_cast<T>(b[oc]);
  }
}

template <typename T>
void conv_backward(const Tensor<T>& x, const ConvLayer& l, const ParamStore& params, const Tensor<T>& gy,
                   Tensor<T>* gx, std::vector<double>* gw, std::vector<double>* gb) {
  if (l.groups == 1) {
    dense_conv_backward(x, l, params, gy, gx, gw, gb);
    return;
  }
  const auto& w = params[l.weight].value;
  const int in_pg = l.in / l.groups;
  const int out_pg = l.out / l.groups;
  const int k = l.kernel, s = l.stride, d = l.dilation;
  const int oh = gy.height, ow = gy.width;
  for (int oc = 0; oc < l.out; ++oc) {
    const int g = oc / out_pg;
    const T* gyp = gy.plane(oc).data();
    if (gb) {
      T acc = 0;
      for (std::size_t i = 0; i < gy.plane_size(); ++i) acc += gyp[i];
      (*gb)[oc] += static_cast<double>(acc);
    }
    for (int icl = 0; icl < in_pg; ++icl) {
      const int ic = g * in_pg + icl;
      const T* xp = x.plane(ic).data();
      T* gxp = gx ? gx->plane(ic).data() : nullptr;
      for (int ky = 0; ky < k; ++ky) {
        int oy_lo, oy_hi;
        valid_range(ky * d - l.pad, s, x.height, oh, oy_lo, oy_hi);
        for (int kx = 0; kx < k; ++kx) {
          const std::size_t widx = ((static_cast<std::size_t>(oc) * in_pg + icl) * k + ky) * k + kx;
          const T wv = static_cast<T>(w[widx]);
          const int offx = kx * d - l.pad;
          int ox_lo, ox_hi;
          valid_range(offx, s, x.width, ow, ox_lo, ox_hi);
          T wacc = 0;
          for (int oy = oy_lo; oy < oy_hi; ++oy) {
            const int iy = oy * s + ky * d - l.pad;
            const T* grow = gyp + static_cast<std::size_t>(oy) * ow;
            const T* xrow = xp + static_cast<std::size_t>(iy) * x.width + offx;
            if (gw) {
              if (s == 1) {
                for (int ox = ox_lo; ox < ox_hi; ++ox) wacc += grow[ox] * xrow[ox];
              } else {
                for (int ox = ox_lo; ox < ox_hi; ++ox) wacc += grow[ox] * xrow[ox * s];
              }
            }
            if (gxp) {
              T* gxrow = gxp + static_cast<std::size_t>(iy) * x.width + offx;
              if (s == 1) {
                for (int ox = ox_lo; ox < ox_hi; ++ox) gxrow[ox] += wv * grow[ox];
              } else {
                for (int ox = ox_lo; ox < ox_hi; ++ox) gxrow[ox * s] += wv * grow[ox];
              }
            }
          }
          if (gw) (*gw)[widx] += static_cast<double>(wacc);
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void conv2d_forward(const Tensor<T>& x, const ConvLayer& l, const ParamStore& params, Tensor<T>& y) {
  if (x.channels != l.in) throw ContractError("convolution input channel mismatch");
  const auto& w = params[l.weight].value;
  const int in_pg = l.in / l.groups;
  const int out_pg = l.out / l.groups;
  const int k = l.kernel, s = l.stride, d = l.dilation;
  const int oh = l.out_size(x.height), ow = l.out_size(x.width);
  y = Tensor<T>(l.out, oh, ow);
  if (l.groups == 1) {
    dense_conv_forward(x, l, params, y);
    return;
  }
  for (int oc = 0; oc < l.out; ++oc) {
    const int g = oc / out_pg;
    T* yp = y.plane(oc).data();
    if (l.bias >= 0) std::fill(yp, yp + y.plane_size(), static_cast<T>(params[l.bias].value[oc]));
    for (int icl = 0; icl < in_pg; ++icl) {
      const T* xp = x.plane(g * in_pg + icl).data();
      for (int ky = 0; ky < k; ++ky) {
        int oy_lo, oy_hi;
        valid_range(ky * d - l.pad, s, x.height, oh, oy_lo, oy_hi);
        for (int kx = 0; kx < k; ++kx) {
          const T wv = static_cast<T>(w[((static_cast<std::size_t>(oc) * in_pg + icl) * k + ky) * k + kx]);
          const int offx = kx * d - l.pad;
          int ox_lo, ox_hi;
          valid_range(offx, s, x.width, ow, ox_lo, ox_hi);
          for (int oy = oy_lo; oy < oy_hi; ++oy) {
            const int iy = oy * s + ky * d - l.pad;
            T* yrow = yp + static_cast<std::size_t>(oy) * ow;
            const T* xrow = xp + static_cast<std::size_t>(iy) * x.width + offx;
            if (s == 1) {
              for (int ox = ox_lo; ox < ox_hi; ++ox) yrow[ox] += wv * xrow[ox];
            } else {
              for (int ox = ox_lo; ox < ox_hi; ++ox) yrow[ox] += wv * xrow[ox * s];
            }
          }
        }
      }
    }
  }
}

template <typename T>
int Graph<T>::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size() - 1);
}

template <typename T>
int Graph<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node n;
  n.kind = Kind::kLeaf;
  n.requires_grad = requires_grad;
  n.value = std::move(value);
  return push(std::move(n));
}

template <typename T>
int Graph<T>::conv(int x, const ConvLayer& layer) {
  Node n;
  n.kind = Kind::kConv;
  n.a = x;
  n.conv = layer;
  conv2d_forward(nodes_[x].value, layer, *params_, n.value);
  return push(std::move(n));
}

template <typename T>
int Graph<T>::relu(int x) {
  return leaky_relu(x, 0.0);
}

template <typename T>
int Graph<T>::leaky_relu(int x, double slope) {
  Node n;
  n.kind = Kind::kLeaky;
  n.a = x;
  n.slope = slope;
  const auto& in = nodes_[x].value;
  n.value = in;
  const T sl = static_cast<T>(slope);
  if (slope == 0.0) {
    for (auto& v : n.value.data) v = v > T(0) ? v : T(0);
  } else {
    for (auto& v : n.value.data) v = v > T(0) ? v : v * sl;
  }
  return push(std::move(n));
}

template <typename T>
int Graph<T>::resize(int x, int h, int w) {
  Node n;
  n.kind = Kind::kResize;
  n.a = x;
  n.value = resize_bilinear(nodes_[x].value, h, w);
  return push(std::move(n));
}

template <typename T>
int Graph<T>::concat(int a, int b) {
  const auto& va = nodes_[a].value;
  const auto& vb = nodes_[b].value;
  if (va.height != vb.height || va.width != vb.width) throw ContractError("concat spatial mismatch");
  Node n;
  n.kind = Kind::kConcat;
  n.a = a;
  n.b = b;
  n.value = Tensor<T>(va.channels + vb.channels, va.height, va.width);
  std::copy(va.data.begin(), va.data.end(), n.value.data.begin());
  std::copy(vb.data.begin(), vb.data.end(), n.value.data.begin() + va.size());
  return push(std::move(n));
}

template <typename T>
int Graph<T>::global_pool(int x) {
  const auto& in = nodes_[x].value;
  Node n;
  n.kind = Kind::kPool;
  n.a = x;
  n.value = Tensor<T>(in.channels, 1, 1);
  for (int c = 0; c < in.channels; ++c) {
    double acc = 0;
    for (T v : in.plane(c)) acc += static_cast<double>(v);
    n.value.data[c] = static_cast<T>(acc / static_cast<double>(in.plane_size()));
  }
  return push(std::move(n));
}

template <typename T>
int Graph<T>::channel_affine(int x, std::span<const T> scale, std::span<const T> bias) {
  const auto& in = nodes_[x].value;
  if (scale.size() != static_cast<std::size_t>(in.channels) || bias.size() != scale.size())
    throw ContractError("auxiliary parameter length does not match feature channels");
  Node n;
  n.kind = Kind::kAffine;
  n.a = x;
  n.scale.assign(scale.begin(), scale.end());
  n.bias.assign(bias.begin(), bias.end());
  n.value = Tensor<T>(in.channels, in.height, in.width);
  for (int c = 0; c < in.channels; ++c) {
    const T sc = scale[c], bc = bias[c];
    auto src = in.plane(c);
    auto dst = n.value.plane(c);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = sc * src[i] + bc;
  }
  return push(std::move(n));
}

template <typename T>
void Graph<T>::backward(int out, Tensor<T> seed, ParamGrads* param_grads) {
  if (!seed.same_shape(nodes_[out].value)) throw ContractError("backward seed shape mismatch");
  // reach[i]: something upstream of node i wants a gradient.
  std::vector<char> reach(nodes_.size(), 0);
  for (std::size_t i = 0; i <= static_cast<std::size_t>(out); ++i) {
    Node& n = nodes_[i];
    bool r = n.requires_grad || n.kind == Kind::kAffine || (n.kind == Kind::kConv && param_grads);
    if (n.a >= 0) r = r || reach[n.a];
    if (n.b >= 0) r = r || reach[n.b];
    reach[i] = r;
    n.grad = Tensor<T>();
  }
  nodes_[out].grad = std::move(seed);

  auto accumulate = [&](int id, Tensor<T>&& g) {
    if (id < 0 || !reach[id]) return;
    Node& dst = nodes_[id];
    if (dst.grad.empty()) {
      dst.grad = std::move(g);
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) dst.grad.data[i] += g.data[i];
    }
  };

  for (int i = out; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!reach[i] || n.grad.empty()) continue;
    const Tensor<T>& g = n.grad;
    switch (n.kind) {
      case Kind::kLeaf:
      case Kind::kRelu:
        break;
      case Kind::kConv: {
        const Tensor<T>& x = nodes_[n.a].value;
        Tensor<T> gx;
        const bool want_x = reach[n.a];
        if (want_x) gx = Tensor<T>(x.channels, x.height, x.width);
        std::vector<double>* gw = param_grads ? &param_grads->values[n.conv.weight] : nullptr;
        std::vector<double>* gb =
            (param_grads && n.conv.bias >= 0) ? &param_grads->values[n.conv.bias] : nullptr;
        if (want_x || gw) conv_backward(x, n.conv, *params_, g, want_x ? &gx : nullptr, gw, gb);
        if (want_x) accumulate(n.a, std::move(gx));
        break;
      }
      case Kind::kLeaky: {
        if (!reach[n.a]) break;
        const Tensor<T>& x = nodes_[n.a].value;
        Tensor<T> gx = g;
        const T sl = static_cast<T>(n.slope);
        for (std::size_t j = 0; j < gx.size(); ++j)
          if (!(x.data[j] > T(0))) gx.data[j] *= sl;
        accumulate(n.a, std::move(gx));
        break;
      }
      case Kind::kResize: {
        if (!reach[n.a]) break;
        const Tensor<T>& x = nodes_[n.a].value;
        accumulate(n.a, resize_bilinear_adjoint(g, x.height, x.width));
        break;
      }
      case Kind::kConcat: {
        const Tensor<T>& va = nodes_[n.a].value;
        const Tensor<T>& vb = nodes_[n.b].value;
        if (reach[n.a]) {
          Tensor<T> ga(va.channels, va.height, va.width);
          std::copy(g.data.begin(), g.data.begin() + va.size(), ga.data.begin());
          accumulate(n.a, std::move(ga));
        }
        if (reach[n.b]) {
          Tensor<T> gb(vb.channels, vb.height, vb.width);
          std::copy(g.data.begin() + va.size(), g.data.end(), gb.data.begin());
          accumulate(n.b, std::move(gb));
        }
        break;
      }
      case Kind::kPool: {
        if (!reach[n.a]) break;
        const Tensor<T>& x = nodes_[n.a].value;
        Tensor<T> gx(x.channels, x.height, x.width);
        const T inv = T(1) / static_cast<T>(x.plane_size());
        for (int c = 0; c < x.channels; ++c) {
          const T v = g.data[c] * inv;
          for (T& e : gx.plane(c)) e = v;
        }
        accumulate(n.a, std::move(gx));
        break;
      }
      case Kind::kAffine: {
        const Tensor<T>& x = nodes_[n.a].value;
        n.scale_grad.assign(x.channels, T(0));
        n.bias_grad.assign(x.channels, T(0));
        for (int c = 0; c < x.channels; ++c) {
          auto gp = g.plane(c);
          auto xp = x.plane(c);
          double gs = 0, gbias = 0;
          for (std::size_t j = 0; j < gp.size(); ++j) {
            gs += static_cast<double>(gp[j]) * static_cast<double>(xp[j]);
            gbias += static_cast<double>(gp[j]);
          }
          n.scale_grad[c] = static_cast<T>(gs);
          n.bias_grad[c] = static_cast<T>(gbias);
        }
        if (reach[n.a]) {
          Tensor<T> gx = g;
          for (int c = 0; c < x.channels; ++c)
            for (T& e : gx.plane(c)) e *= n.scale[c];
          accumulate(n.a, std::move(gx));
        }
        break;
      }
    }
  }
}

template class Graph<float>;
template class Graph<double>;
template void conv2d_forward(const Tensor<float>&, const ConvLayer&, const ParamStore&, Tensor<float>&);
template void conv2d_forward(const Tensor<double>&, const ConvLayer&, const ParamStore&, Tensor<double>&);

}  // namespace fbrs::nn
