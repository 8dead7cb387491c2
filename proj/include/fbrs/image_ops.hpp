#pragma once

#include "fbrs/tensor.hpp"

#include <vector>

namespace fbrs {

/// One axis of a half-pixel-centred bilinear resampling: output index i reads
/// lo[i] and hi[i] with weight frac[i] on hi.
struct ResampleAxis {
  std::vector<int> lo;
  std::vector<int> hi;
  std::vector<double> frac;
};

ResampleAxis make_resample_axis(int in_size, int out_size);

/// Bilinear resize (pixel-centre convention, edge clamped). Interpolation is
/// written as a + f*(b-a), so constant regions and same-size resizes are
/// reproduced exactly.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& in, int out_h, int out_w);

/// Adjoint of resize_bilinear: scatters an output-space gradient back onto the
/// input grid.
template <typename T>
Tensor<T> resize_bilinear_adjoint(const Tensor<T>& grad_out, int in_h, int in_w);

/// Copies rows [y0,y1) and cols [x0,x1).
template <typename T>
Tensor<T> crop(const Tensor<T>& in, int y0, int x0, int y1, int x1);

BinaryMask crop(const BinaryMask& in, int y0, int x0, int y1, int x1);

BinaryMask resize_nearest(const BinaryMask& in, int out_h, int out_w);

template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& in);
template <typename T>
Tensor<T> flip_vertical(const Tensor<T>& in);
BinaryMask flip_horizontal(const BinaryMask& in);
BinaryMask flip_vertical(const BinaryMask& in);

/// Tight bounding box of the set pixels, [y0,y1) x [x0,x1). Returns false for
/// an empty mask.
bool mask_bbox(const BinaryMask& m, int& y0, int& x0, int& y1, int& x1);

}  // namespace fbrs
