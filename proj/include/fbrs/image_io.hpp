#pragma once

#include "fbrs/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fbrs {

using Bytes = std::vector<std::uint8_t>;

Bytes read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

/// Any PNG colour type, converted to 8-bit RGB and scaled to [0,1].
ImageTensor decode_png_image(std::span<const std::uint8_t> png);
Bytes encode_png_image(const ImageTensor& image);

/// Gray conversion, then pixel >= 128 is foreground; masks whose maximum
/// value is 1 are read as 0/1.
BinaryMask decode_png_mask(std::span<const std::uint8_t> png);
/// 0/255 gray PNG.
Bytes encode_png_mask(const BinaryMask& mask);

/// 1 x H x W probabilities as an 8-bit gray PNG, round(255 p).
Bytes encode_png_prob(const Tensor<float>& prob);

ImageTensor load_image(const std::string& path);
BinaryMask load_mask(const std::string& path);

/// Row-major run lengths alternating background and foreground, starting
/// with background (a leading zero when the first pixel is set).
struct Rle {
  int height = 0;
  int width = 0;
  std::vector<std::uint32_t> counts;

  friend bool operator==(const Rle&, const Rle&) = default;
};

Rle rle_encode(const BinaryMask& mask);
/// Throws ContractError when the runs do not cover exactly H x W pixels.
BinaryMask rle_decode(const Rle& rle);

struct DatasetItem {
  std::string id;
  ImageTensor image;
  BinaryMask gt;
};

/// Reads `dir/index.txt`: one "id image_file mask_file" line per item, paths
/// relative to `dir`; blank lines and lines starting with '#' are skipped.
std::vector<DatasetItem> load_dataset(const std::string& dir);
/// Writes PNG pairs and the index under `dir`, creating it if needed.
void write_dataset(const std::string& dir, const std::vector<DatasetItem>& items);

}  // namespace fbrs
