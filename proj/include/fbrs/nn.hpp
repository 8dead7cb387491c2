#pragma once

#include "fbrs/tensor.hpp"

#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <vector>

namespace fbrs::nn {

struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<float> value;
  bool backbone = false;  // trained with the reduced backbone learning rate
};

class ParamStore {
 public:
  int add(std::string name, std::vector<int> shape, bool backbone);
  std::size_t size() const { return params_.size(); }
  Param& operator[](std::size_t i) { return params_[i]; }
  const Param& operator[](std::size_t i) const { return params_[i]; }
  const Param* find(const std::string& name) const;
  Param* find(const std::string& name);
  std::size_t total_values() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Param> params_;
};

/// Gradient accumulators shaped like a ParamStore.
struct ParamGrads {
  std::vector<std::vector<double>> values;

  explicit ParamGrads(const ParamStore& store);
  void zero();
  void add(const ParamGrads& other);
};

struct ConvLayer {
  int in = 0;
  int out = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  int dilation = 1;
  int groups = 1;
  int weight = -1;  // index into ParamStore, shape {out, in/groups, k, k}
  int bias = -1;    // index into ParamStore or -1

  int out_size(int in_size) const {
    return (in_size + 2 * pad - dilation * (kernel - 1) - 1) / stride + 1;
  }
};

/// Adds a convolution's parameters to `store` and returns the layer descriptor.
ConvLayer make_conv(ParamStore& store, const std::string& name, int in, int out, int kernel,
                    int stride, int dilation, int groups, bool bias, bool backbone);

/// Records a forward computation and replays it backwards. Values live in the
/// graph; parameters are read from the (immutable) store. Each evaluation owns
/// its graph, so one store can be evaluated from many threads at once.
template <typename T>
class Graph {
 public:
  explicit Graph(const ParamStore& params) : params_(&params) {}

  int leaf(Tensor<T> value, bool requires_grad = false);
  int conv(int x, const ConvLayer& layer);
  int relu(int x);
  int leaky_relu(int x, double slope);
  int resize(int x, int h, int w);
  int concat(int a, int b);
  int global_pool(int x);
  /// y[c] = scale[c] * x[c] + bias[c]
  int channel_affine(int x, std::span<const T> scale, std::span<const T> bias);

  const Tensor<T>& value(int id) const { return nodes_[id].value; }
  Tensor<T> take_value(int id) { return std::move(nodes_[id].value); }

  /// Propagates `seed` (d energy / d value(out)) back through the graph.
  /// Weight gradients are accumulated into `param_grads` when non-null.
  void backward(int out, Tensor<T> seed, ParamGrads* param_grads = nullptr);

  /// Gradient of a node after backward(); empty if nothing flowed into it.
  const Tensor<T>& grad(int id) const { return nodes_[id].grad; }
  const std::vector<T>& affine_scale_grad(int id) const { return nodes_[id].scale_grad; }
  const std::vector<T>& affine_bias_grad(int id) const { return nodes_[id].bias_grad; }

 private:
  enum class Kind : std::uint8_t { kLeaf, kConv, kRelu, kLeaky, kResize, kConcat, kPool, kAffine };

  struct Node {
    Kind kind = Kind::kLeaf;
    int a = -1;
    int b = -1;
    bool requires_grad = false;
    ConvLayer conv;
    double slope = 0.0;
    std::vector<T> scale, bias, scale_grad, bias_grad;
    Tensor<T> value;
    Tensor<T> grad;
  };

  int push(Node n);

  const ParamStore* params_;
  std::deque<Node> nodes_;
};

template <typename T>
void conv2d_forward(const Tensor<T>& x, const ConvLayer& layer, const ParamStore& params, Tensor<T>& y);

}  // namespace fbrs::nn
