#pragma once

#include "fbrs/tensor.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace fbrs {

enum class ClickLabel : std::uint8_t { kNegative = 0, kPositive = 1 };

struct Click {
  int u = 0;  // row
  int v = 0;  // column
  ClickLabel label = ClickLabel::kPositive;
  int index = 1;  // 1-based order within a session

  bool positive() const { return label == ClickLabel::kPositive; }
  friend bool operator==(const Click&, const Click&) = default;
};

using ClickSet = std::vector<Click>;
using SeededRng = std::mt19937_64;

/// Throws ContractError unless every click is inside H x W, pixels are unique
/// and indices strictly increase.
void validate_clicks(const ClickSet& clicks, int height, int width);

bool contains_pixel(const ClickSet& clicks, int u, int v);

/// Squared Euclidean distance from every pixel to the nearest seed pixel
/// (exact, separable lower-envelope transform). Pixels with no seed anywhere
/// get INT64_MAX.
std::vector<std::int64_t> squared_distance_transform(const std::vector<std::uint8_t>& seeds, int height,
                                                     int width);

/// Per-label Euclidean distance transform of the clicks, clamped at
/// `truncation`.
DistanceMaps make_distance_maps(const ClickSet& clicks, int height, int width, float truncation = 255.0f);

/// First min(n, n_limit) clicks in order.
ClickSet limit_clicks(const ClickSet& clicks, int n_limit);

/// Simulated user: picks the dominant error type (false negatives win ties),
/// takes its largest 8-connected component and returns the pixel farthest from
/// that component's boundary (pixels outside the image count as boundary).
/// Ties go to the lexicographically smallest (u, v). Existing click pixels are
/// never returned. std::nullopt means prediction equals ground truth.
std::optional<Click> next_click(const BinaryMask& pred, const BinaryMask& gt, const ClickSet& existing);

/// Connected components with 8-connectivity. Returns per-pixel labels
/// (0 = background, 1.. = component id in raster order of first pixel).
std::vector<int> label_components(const BinaryMask& mask, int* count = nullptr);

struct TrainingClickOptions {
  int max_positive = 10;
  int max_negative = 10;
  int negative_band_min = 5;   // px from the object
  int negative_band_max = 40;  // px from the object
  int min_spacing = 3;         // px between clicks of one label
  double other_object_prob = 0.5;
};

/// Random click set for training: 1..10 positives inside gt, 0..10 negatives
/// from a band around the object (and on other objects when given).
/// std::nullopt when the object is too small (< 5 px) to sample from.
std::optional<ClickSet> sample_training_clicks(const BinaryMask& gt, SeededRng& rng,
                                               const BinaryMask* other_objects = nullptr,
                                               const TrainingClickOptions& opts = {});

/// Line-oriented click log: "index u v pos|neg" per line, '#' starts a comment.
void write_click_log(std::ostream& os, const ClickSet& clicks);
ClickSet read_click_log(std::istream& is);

}  // namespace fbrs
