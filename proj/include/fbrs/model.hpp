#pragma once

#include "fbrs/nn.hpp"
#include "fbrs/tensor.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace fbrs {

/// Where auxiliary scale/bias can be inserted.
///   A: after the encoder (backbone) output
///   B: after the multi-rate (ASPP-like) block
///   C: after the first separable conv block of the decoder
enum class InsertionPoint { A, B, C };

std::string to_string(InsertionPoint p);
InsertionPoint insertion_point_from_string(const std::string& s);

struct ModelConfig {
  int dmf_hidden = 8;
  double leaky_slope = 0.2;
  std::array<int, 3> stage_widths{16, 32, 48};  // last entry is the channel count at A
  int aspp_branch_width = 16;
  std::array<int, 2> aspp_dilations{2, 3};
  int channels_b = 32;
  int low_level_width = 8;
  int channels_c = 32;
  int tail_blocks = 1;  // separable blocks between C and the classifier
  std::uint64_t seed = 0;

  int channels_at(InsertionPoint p) const;
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Intermediate activations at an insertion point, plus the cached low-level
/// skip features the decoder consumes. Everything needed to run the head.
template <typename T>
struct Features {
  InsertionPoint point = InsertionPoint::B;
  Tensor<T> data;
  Tensor<T> skip;
  int out_height = 0;
  int out_width = 0;

  friend bool operator==(const Features&, const Features&) = default;
};
using FeatureTensor = Features<float>;

/// Channel-wise scale and bias applied at an insertion point.
template <typename T>
struct Aux {
  std::vector<T> scale;
  std::vector<T> bias;

  static Aux identity(int channels) {
    return Aux{std::vector<T>(channels, T(1)), std::vector<T>(channels, T(0))};
  }
  std::size_t channels() const { return scale.size(); }

  friend bool operator==(const Aux&, const Aux&) = default;
};
using AuxParams = Aux<float>;

/// Energy over the logit map: returns E and writes dE/dlogits into `grad`
/// (already sized like `logits`).
template <typename T>
using EnergyFn = std::function<double(const Tensor<T>& logits, Tensor<T>& grad)>;

template <typename T>
struct InputGradient {
  double energy = 0;
  Tensor<T> logits;
  Tensor<T> grad;  // same shape as the stacked 5-channel input
};

template <typename T>
struct AuxGradient {
  double energy = 0;
  Tensor<T> logits;
  std::vector<T> scale_grad;
  std::vector<T> bias_grad;
};

enum class GradTargetKind { kImage, kDistanceMaps, kAux };

struct GradTarget {
  GradTargetKind kind = GradTargetKind::kAux;
  InsertionPoint point = InsertionPoint::B;
};

/// Desk-scale DeepLabV3+-style segmentation network with a distance-map fusion
/// block in front. Weights are immutable once the model is handed to an engine;
/// every evaluation builds its own graph, so concurrent evaluation is safe.
class Model {
 public:
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  int channels_at(InsertionPoint p) const { return cfg_.channels_at(p); }

  Logits forward(const ImageTensor& image, const DistanceMaps& dmaps) const;
  FeatureTensor features_at(const ImageTensor& image, const DistanceMaps& dmaps, InsertionPoint point) const;
  Logits head_forward_with_aux(const FeatureTensor& feats, const AuxParams& aux) const;

  /// 5-channel network input: centred RGB followed by distance maps scaled by
  /// their truncation into [0,1].
  template <typename T>
  Tensor<T> stack_inputs(const ImageTensor& image, const DistanceMaps& dmaps) const;

  template <typename T>
  Tensor<T> forward_stacked(const Tensor<T>& input) const;

  template <typename T>
  Features<T> features_from_stacked(const Tensor<T>& input, InsertionPoint point) const;

  template <typename T>
  Tensor<T> head_forward(const Features<T>& feats, const Aux<T>& aux) const;

  /// d energy / d stacked input.
  template <typename T>
  InputGradient<T> grad_wrt_input(const Tensor<T>& input, const EnergyFn<T>& energy) const;

  /// d energy / d (scale, bias); backpropagates through the head only.
  template <typename T>
  AuxGradient<T> grad_wrt_aux(const Features<T>& feats, const Aux<T>& aux, const EnergyFn<T>& energy) const;

  /// Training step helper: forward + backward with weight gradients. `loss`
  /// receives logits and writes dLoss/dlogits.
  double accumulate_param_grads(const Tensor<float>& input, const EnergyFn<float>& loss,
                                nn::ParamGrads& grads, Tensor<float>* logits_out = nullptr) const;

  /// Forward keeping the graph alive so the caller can seed backward later.
  struct TrainTrace {
    nn::Graph<float> graph;
    int logits = -1;
  };
  TrainTrace forward_for_training(const Tensor<float>& input) const;

  const nn::ConvLayer& classifier() const { return cls_; }

 private:
  struct EncoderIds {
    int a = -1;
    int skip = -1;
  };

  template <typename T>
  EncoderIds encode(nn::Graph<T>& g, int input) const;
  template <typename T>
  int aspp(nn::Graph<T>& g, int a) const;
  template <typename T>
  int decode_first(nn::Graph<T>& g, int b, int skip) const;
  template <typename T>
  int tail(nn::Graph<T>& g, int c, int out_h, int out_w) const;
  /// Runs every stage after `from`, starting at node `feat`.
  template <typename T>
  int build_from(nn::Graph<T>& g, InsertionPoint from, int feat, int skip, int out_h, int out_w) const;

  void init_weights();

  ModelConfig cfg_;
  nn::ParamStore params_;
  nn::ConvLayer dmf1_, dmf2_;
  std::array<nn::ConvLayer, 6> enc_;
  nn::ConvLayer aspp_1x1_, aspp_pool_;
  std::array<nn::ConvLayer, 2> aspp_dil_;
  nn::ConvLayer aspp_proj_;
  nn::ConvLayer low_proj_;
  nn::ConvLayer sep1_dw_, sep1_pw_;
  std::vector<nn::ConvLayer> tail_dw_, tail_pw_;
  nn::ConvLayer cls_;
};

/// Gradient of `energy` evaluated at the given point with respect to the
/// selected target, flattened. For kImage/kDistanceMaps `input` is the stacked
/// network input; for kAux `feats`/`aux` give the evaluation point.
template <typename T>
std::vector<T> grad_energy(const Model& model, const EnergyFn<T>& energy, const GradTarget& target,
                           const Tensor<T>* input, const Features<T>* feats, const Aux<T>* aux,
                           double* energy_out = nullptr);

void validate_aux(const AuxParams& aux, int channels);

}  // namespace fbrs
