#pragma once

#include "fbrs/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace fbrs {

enum class LossKind { kNfl, kBce };

/// How the focal weights are rescaled.
///   kGradientMass: sum_i |dL/dlogit_i| equals that of BCE on the same batch.
///   kPixelCount:   sum_i w_i equals the pixel count.
enum class NflNormalization { kGradientMass, kPixelCount };

struct LossConfig {
  LossKind kind = LossKind::kNfl;
  double gamma = 2.0;
  NflNormalization normalization = NflNormalization::kGradientMass;
  bool per_image = false;  // normalize focal weights per image instead of per batch
  double eps = 1e-7;       // probabilities are clamped to [eps, 1 - eps]
};

struct PixelLoss {
  double value = 0;
  std::vector<double> weights;     // per pixel; all 1 for BCE
  std::vector<double> grad_logit;  // dL/dlogit, weights held constant
};

/// Mean weighted cross-entropy over the given pixels.
PixelLoss pixel_loss(std::span<const double> prob, std::span<const std::uint8_t> gt, const LossConfig& cfg);

struct BatchLoss {
  double value = 0;
  std::vector<Tensor<float>> grad;  // dL/dlogits per image
};

/// Loss over a batch of 1 x H x W logit maps, averaged over every pixel of
/// the batch.
BatchLoss batch_loss(const std::vector<Tensor<float>>& logits, const std::vector<BinaryMask>& gt,
                     const LossConfig& cfg);

}  // namespace fbrs
