#pragma once

#include "fbrs/clicks.hpp"
#include "fbrs/tensor.hpp"

#include <optional>

namespace fbrs {

/// Crop window [y0,y1) x [x0,x1) in full-image pixels, resized by `scale`.
struct CropRect {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;
  double scale = 1.0;

  int height() const { return y1 - y0; }
  int width() const { return x1 - x0; }
  int out_height() const;
  int out_width() const;
  bool contains(int u, int v) const { return u >= y0 && u < y1 && v >= x0 && v < x1; }

  friend bool operator==(const CropRect&, const CropRect&) = default;
};

struct ZoomState {
  bool active = false;
  std::optional<CropRect> rect;
  int target_long_side = 400;
  double expand_ratio = 0.4;  // total growth per dimension, split over both sides
  int min_side = 8;           // smaller crops disable zoom for the click
  int start_click = 3;

  friend bool operator==(const ZoomState&, const ZoomState&) = default;
};

/// Tight mask bbox grown by expand_ratio/2 of its size on every side, clamped
/// to the image, with scale = target_long_side / longest side.
/// std::nullopt for an empty mask.
std::optional<CropRect> compute_crop(const BinaryMask& mask, int height, int width, const ZoomState& state);

/// Grows the active rect so it covers a click that falls outside it, plus the
/// expansion margin on the grown sides. Inactive states and inside clicks are
/// returned unchanged.
ZoomState update_on_click(const ZoomState& state, const Click& click, int height, int width);

/// Whether the crop is large enough to be used.
bool crop_usable(const CropRect& rect, const ZoomState& state);

/// Crops every channel to the rect and resizes it bilinearly to the rect's
/// output size.
Tensor<float> apply_crop(const Tensor<float>& full, const CropRect& rect);

/// Resizes crop-space logits back to the rect and writes them over a copy of
/// `previous`; pixels outside the rect keep their previous values.
Tensor<float> paste_back(const Tensor<float>& crop_logits, const CropRect& rect, const Tensor<float>& previous);

/// Full-image click to crop coordinates; std::nullopt when outside the rect.
std::optional<Click> to_crop(const Click& click, const CropRect& rect);
/// Crop-space click back to full-image coordinates.
Click to_full(const Click& click, const CropRect& rect);

}  // namespace fbrs
