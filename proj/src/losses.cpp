#include "fbrs/losses.hpp"

#include <algorithm>
#include <cmath>

namespace fbrs {

namespace {

// Focal weights for one normalization group, written into `w`.
void focal_weights(std::span<const double> pt, const LossConfig& cfg, std::span<double> w) {
  if (cfg.kind == LossKind::kBce || cfg.gamma == 0.0) {
    std::fill(w.begin(), w.end(), 1.0);
    return;
  }
  double raw_sum = 0, mass = 0, focal_mass = 0;
  for (std::size_t i = 0; i < pt.size(); ++i) {
    const double q = 1.0 - pt[i];
    w[i] = std::pow(q, cfg.gamma);
    raw_sum += w[i];
    mass += q;
    focal_mass += w[i] * q;
  }
  const double k = cfg.normalization == NflNormalization::kPixelCount ? static_cast<double>(pt.size()) / raw_sum
                                                                      : mass / focal_mass;
  for (auto& v : w) v *= k;
}

}  // namespace

PixelLoss pixel_loss(std::span<const double> prob, std::span<const std::uint8_t> gt, const LossConfig& cfg) {
  if (prob.size() != gt.size()) throw ContractError("probability and mask sizes differ");
  if (prob.empty()) throw ContractError("empty loss input");
  if (!(cfg.eps > 0 && cfg.eps < 0.5)) throw ContractError("eps must be in (0, 0.5)");
  if (!(cfg.gamma >= 0)) throw ContractError("gamma must be >= 0");
  const std::size_t n = prob.size();
  std::vector<double> pt(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::clamp(prob[i], cfg.eps, 1.0 - cfg.eps);
    pt[i] = gt[i] ? p : 1.0 - p;
  }
  PixelLoss out;
  out.weights.resize(n);
  focal_weights(pt, cfg, out.weights);
  out.grad_logit.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.value -= out.weights[i] * std::log(pt[i]);
    // d(-log pt)/dlogit = p - y, and |p - y| = 1 - pt.
    const double q = 1.0 - pt[i];
    out.grad_logit[i] = out.weights[i] * (gt[i] ? -q : q) / static_cast<double>(n);
  }
  out.value /= static_cast<double>(n);
  return out;
}

BatchLoss batch_loss(const std::vector<Tensor<float>>& logits, const std::vector<BinaryMask>& gt,
                     const LossConfig& cfg) {
  if (logits.size() != gt.size() || logits.empty()) throw ContractError("batch sizes differ or are empty");
  std::size_t total = 0;
  for (std::size_t b = 0; b < logits.size(); ++b) {
    if (logits[b].channels != 1 || logits[b].height != gt[b].height || logits[b].width != gt[b].width)
      throw ContractError("logits and mask shapes differ");
    total += logits[b].size();
  }
  BatchLoss out;
  out.grad.resize(logits.size());
  auto run_group = [&](std::size_t first, std::size_t last) {
    std::vector<double> prob;
    std::vector<std::uint8_t> labels;
    for (std::size_t b = first; b < last; ++b) {
      for (float z : logits[b].data) prob.push_back(sigmoid(z));
      labels.insert(labels.end(), gt[b].data.begin(), gt[b].data.end());
    }
    const auto pl = pixel_loss(prob, labels, cfg);
    // Group means are re-weighted into one mean over the whole batch.
    const double share = static_cast<double>(prob.size()) / static_cast<double>(total);
    out.value += pl.value * share;
    std::size_t k = 0;
    for (std::size_t b = first; b < last; ++b) {
      out.grad[b] = Tensor<float>(1, logits[b].height, logits[b].width);
      for (auto& g : out.grad[b].data) g = static_cast<float>(pl.grad_logit[k++] * share);
    }
  };
  if (cfg.per_image) {
    for (std::size_t b = 0; b < logits.size(); ++b) run_group(b, b + 1);
  } else {
    run_group(0, logits.size());
  }
  return out;
}

}  // namespace fbrs
