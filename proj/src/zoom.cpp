#include "fbrs/zoom.hpp"

#include "fbrs/image_ops.hpp"

#include <algorithm>
#include <cmath>

namespace fbrs {

namespace {

int side_pad(int size, double ratio) { return static_cast<int>(std::lround(ratio / 2.0 * size)); }

CropRect finish(int y0, int x0, int y1, int x1, int height, int width, const ZoomState& st) {
  CropRect r;
  r.y0 = std::max(0, y0);
  r.x0 = std::max(0, x0);
  r.y1 = std::min(height, y1);
  r.x1 = std::min(width, x1);
  r.scale = static_cast<double>(st.target_long_side) / std::max(r.height(), r.width());
  return r;
}

}  // namespace

int CropRect::out_height() const { return std::max(1, static_cast<int>(std::lround(height() * scale))); }
int CropRect::out_width() const { return std::max(1, static_cast<int>(std::lround(width() * scale))); }

std::optional<CropRect> compute_crop(const BinaryMask& mask, int height, int width, const ZoomState& state) {
  if (mask.height != height || mask.width != width) throw ContractError("mask does not match the image size");
  if (state.target_long_side < 1) throw ContractError("target_long_side must be >= 1");
  if (!(state.expand_ratio >= 0)) throw ContractError("expand_ratio must be >= 0");
  int y0, x0, y1, x1;
  if (!mask_bbox(mask, y0, x0, y1, x1)) return std::nullopt;
  const int py = side_pad(y1 - y0, state.expand_ratio), px = side_pad(x1 - x0, state.expand_ratio);
  return finish(y0 - py, x0 - px, y1 + py, x1 + px, height, width, state);
}

ZoomState update_on_click(const ZoomState& state, const Click& click, int height, int width) {
  if (!state.active || !state.rect || state.rect->contains(click.u, click.v)) return state;
  const CropRect& r = *state.rect;
  int y0 = std::min(r.y0, click.u), y1 = std::max(r.y1, click.u + 1);
  int x0 = std::min(r.x0, click.v), x1 = std::max(r.x1, click.v + 1);
  const int py = side_pad(y1 - y0, state.expand_ratio), px = side_pad(x1 - x0, state.expand_ratio);
  if (click.u < r.y0) y0 -= py;
  if (click.u >= r.y1) y1 += py;
  if (click.v < r.x0) x0 -= px;
  if (click.v >= r.x1) x1 += px;
  ZoomState next = state;
  next.rect = finish(y0, x0, y1, x1, height, width, state);
  return next;
}

bool crop_usable(const CropRect& rect, const ZoomState& state) {
  return rect.height() >= state.min_side && rect.width() >= state.min_side;
}

Tensor<float> apply_crop(const Tensor<float>& full, const CropRect& rect) {
  if (rect.y0 < 0 || rect.x0 < 0 || rect.y1 > full.height || rect.x1 > full.width || rect.height() < 1 ||
      rect.width() < 1)
    throw ContractError("crop rect outside the image");
  return resize_bilinear(crop(full, rect.y0, rect.x0, rect.y1, rect.x1), rect.out_height(), rect.out_width());
}

Tensor<float> paste_back(const Tensor<float>& crop_logits, const CropRect& rect, const Tensor<float>& previous) {
  if (rect.y0 < 0 || rect.x0 < 0 || rect.y1 > previous.height || rect.x1 > previous.width)
    throw ContractError("crop rect outside the image");
  if (crop_logits.channels != previous.channels) throw ContractError("channel count mismatch");
  const Tensor<float> back = resize_bilinear(crop_logits, rect.height(), rect.width());
  Tensor<float> out = previous;
  for (int c = 0; c < out.channels; ++c)
    for (int y = 0; y < rect.height(); ++y)
      for (int x = 0; x < rect.width(); ++x) out(c, rect.y0 + y, rect.x0 + x) = back(c, y, x);
  return out;
}

std::optional<Click> to_crop(const Click& click, const CropRect& rect) {
  if (!rect.contains(click.u, click.v)) return std::nullopt;
  const double sy = static_cast<double>(rect.out_height()) / rect.height();
  const double sx = static_cast<double>(rect.out_width()) / rect.width();
  Click c = click;
  c.u = std::clamp(static_cast<int>(std::lround((click.u - rect.y0 + 0.5) * sy - 0.5)), 0, rect.out_height() - 1);
  c.v = std::clamp(static_cast<int>(std::lround((click.v - rect.x0 + 0.5) * sx - 0.5)), 0, rect.out_width() - 1);
  return c;
}

Click to_full(const Click& click, const CropRect& rect) {
  const double sy = static_cast<double>(rect.out_height()) / rect.height();
  const double sx = static_cast<double>(rect.out_width()) / rect.width();
  Click c = click;
  c.u = rect.y0 + std::clamp(static_cast<int>(std::lround((click.u + 0.5) / sy - 0.5)), 0, rect.height() - 1);
  c.v = rect.x0 + std::clamp(static_cast<int>(std::lround((click.v + 0.5) / sx - 0.5)), 0, rect.width() - 1);
  return c;
}

}  // namespace fbrs
