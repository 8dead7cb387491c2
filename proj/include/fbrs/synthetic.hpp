#pragma once

#include "fbrs/clicks.hpp"
#include "fbrs/tensor.hpp"

#include <array>
#include <string>
#include <vector>

namespace fbrs {

enum class ShapeKind { kEllipse, kPolygon, kRing };
std::string to_string(ShapeKind k);

struct ShapeMeta {
  ShapeKind kind = ShapeKind::kEllipse;
  double cy = 0, cx = 0;  // centre, pixels
  double radius = 0;      // bounding radius
  std::array<float, 3> color{};
  bool target = false;    // the shape whose visible part is gt

  friend bool operator==(const ShapeMeta&, const ShapeMeta&) = default;
};

struct SyntheticSample {
  ImageTensor image;
  BinaryMask gt;
  BinaryMask others;  // visible pixels of the non-target shapes
  std::vector<ShapeMeta> meta;

  friend bool operator==(const SyntheticSample&, const SyntheticSample&) = default;
};

struct SyntheticOptions {
  int min_shapes = 1;
  int max_shapes = 3;
  double min_radius = 0.12;  // fraction of the shorter side
  double max_radius = 0.32;
  int min_gt_area = 25;
  int supersample = 4;  // per axis, for anti-aliasing
};

SyntheticSample gen_synthetic_sample(int height, int width, SeededRng& rng, const SyntheticOptions& opts = {});

/// n samples; sample i is drawn from its own stream seeded by (seed, i), so
/// prefixes of larger datasets are identical.
std::vector<SyntheticSample> gen_synthetic_dataset(int n, int height, int width, std::uint64_t seed,
                                                   const SyntheticOptions& opts = {});

/// A single centred disk of the given radius on a plain background.
SyntheticSample centered_disk_sample(int height, int width, double radius);

struct AugmentParams {
  bool hflip = false;
  bool vflip = false;
  double scale = 1.0;
};

/// Flips, then bilinear resize of the image and nearest resize of the masks.
SyntheticSample apply_augment(const SyntheticSample& s, const AugmentParams& p);

/// Draws flip flags and a scale in [min_scale, max_scale]. Draws again when
/// the resized gt would be empty; after 10 attempts falls back to identity.
SyntheticSample augment(const SyntheticSample& s, SeededRng& rng, double min_scale = 0.75, double max_scale = 1.25,
                        AugmentParams* used = nullptr);

/// Random crop of the given size, biased to keep at least part of gt inside.
/// Samples smaller than the crop are padded by edge replication first.
SyntheticSample random_crop(const SyntheticSample& s, int height, int width, SeededRng& rng);

}  // namespace fbrs
