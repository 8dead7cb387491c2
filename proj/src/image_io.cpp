#include "fbrs/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

namespace fbrs {

namespace {

struct PngImage {
  png_image img{};
  PngImage() { img.version = PNG_IMAGE_VERSION; }
  ~PngImage() { png_image_free(&img); }
};

std::vector<std::uint8_t> decode_png(std::span<const std::uint8_t> png, std::uint32_t format, int& h, int& w) {
  PngImage p;
  if (!png_image_begin_read_from_memory(&p.img, png.data(), png.size()))
    throw ContractError(std::string("not a readable PNG: ") + p.img.message);
  p.img.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(p.img));
  if (!png_image_finish_read(&p.img, nullptr, buf.data(), 0, nullptr))
    throw ContractError(std::string("PNG decode failed: ") + p.img.message);
  h = static_cast<int>(p.img.height);
  w = static_cast<int>(p.img.width);
  return buf;
}

Bytes encode_png(const std::vector<std::uint8_t>& pixels, std::uint32_t format, int h, int w) {
  PngImage p;
  p.img.format = format;
  p.img.height = static_cast<png_uint_32>(h);
  p.img.width = static_cast<png_uint_32>(w);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&p.img, nullptr, &size, 0, pixels.data(), 0, nullptr))
    throw std::runtime_error(std::string("PNG encode failed: ") + p.img.message);
  Bytes out(size);
  if (!png_image_write_to_memory(&p.img, out.data(), &size, 0, pixels.data(), 0, nullptr))
    throw std::runtime_error(std::string("PNG encode failed: ") + p.img.message);
  out.resize(size);
  return out;
}

std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

}  // namespace

Bytes read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  return Bytes(std::istreambuf_iterator<char>(is), {});
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("write failed: " + path);
}

ImageTensor decode_png_image(std::span<const std::uint8_t> png) {
  int h = 0, w = 0;
  const auto buf = decode_png(png, PNG_FORMAT_RGB, h, w);
  Tensor<float> t(3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        t(c, y, x) = static_cast<float>(buf[(static_cast<std::size_t>(y) * w + x) * 3 + c]) / 255.0f;
  return ImageTensor(std::move(t));
}

Bytes encode_png_image(const ImageTensor& image) {
  const int h = image.height(), w = image.width();
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] = to_byte(image.data(c, y, x));
  return encode_png(buf, PNG_FORMAT_RGB, h, w);
}

BinaryMask decode_png_mask(std::span<const std::uint8_t> png) {
  int h = 0, w = 0;
  const auto buf = decode_png(png, PNG_FORMAT_GRAY, h, w);
  const std::uint8_t hi = buf.empty() ? 0 : *std::max_element(buf.begin(), buf.end());
  const std::uint8_t threshold = hi == 1 ? 1 : 128;
  BinaryMask m(h, w);
  for (std::size_t i = 0; i < buf.size(); ++i) m.data[i] = buf[i] >= threshold;
  return m;
}

Bytes encode_png_mask(const BinaryMask& mask) {
  std::vector<std::uint8_t> buf(mask.data.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = mask.data[i] ? 255 : 0;
  return encode_png(buf, PNG_FORMAT_GRAY, mask.height, mask.width);
}

Bytes encode_png_prob(const Tensor<float>& prob) {
  if (prob.channels != 1) throw ContractError("probability map must have one channel");
  std::vector<std::uint8_t> buf(prob.data.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = to_byte(prob.data[i]);
  return encode_png(buf, PNG_FORMAT_GRAY, prob.height, prob.width);
}

ImageTensor load_image(const std::string& path) { return decode_png_image(read_file(path)); }
BinaryMask load_mask(const std::string& path) { return decode_png_mask(read_file(path)); }

Rle rle_encode(const BinaryMask& mask) {
  Rle r{mask.height, mask.width, {}};
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (auto v : mask.data) {
    const std::uint8_t b = v != 0;
    if (b != current) {
      r.counts.push_back(run);
      run = 0;
      current = b;
    }
    ++run;
  }
  if (run > 0 || r.counts.empty()) r.counts.push_back(run);
  return r;
}

BinaryMask rle_decode(const Rle& rle) {
  if (rle.height < 0 || rle.width < 0) throw ContractError("negative RLE size");
  BinaryMask m(rle.height, rle.width);
  std::size_t pos = 0;
  std::uint8_t value = 0;
  for (auto n : rle.counts) {
    if (n > m.data.size() - pos) throw ContractError("RLE runs exceed the mask size");
    std::fill_n(m.data.begin() + static_cast<std::ptrdiff_t>(pos), n, value);
    pos += n;
    value ^= 1;
  }
  if (pos != m.data.size()) throw ContractError("RLE runs do not cover the mask");
  return m;
}

std::vector<DatasetItem> load_dataset(const std::string& dir) {
  const std::filesystem::path root(dir);
  std::ifstream is(root / "index.txt");
  if (!is) throw std::runtime_error("cannot read dataset index " + (root / "index.txt").string());
  std::vector<DatasetItem> items;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    std::string id, image, mask, extra;
    if (!(ls >> id >> image >> mask) || (ls >> extra))
      throw ContractError("index.txt line " + std::to_string(lineno) + ": expected \"id image mask\"");
    DatasetItem item{id, load_image((root / image).string()), load_mask((root / mask).string())};
    if (!item.gt.same_shape(BinaryMask(item.image.height(), item.image.width())))
      throw ContractError("mask size differs from image size for " + id);
    items.push_back(std::move(item));
  }
  if (items.empty()) throw ContractError("dataset index lists no items");
  return items;
}

void write_dataset(const std::string& dir, const std::vector<DatasetItem>& items) {
  const std::filesystem::path root(dir);
  std::filesystem::create_directories(root);
  std::ofstream index(root / "index.txt", std::ios::trunc);
  if (!index) throw std::runtime_error("cannot write dataset index in " + dir);
  for (const auto& it : items) {
    if (it.id.empty() || it.id.find_first_of(" \t\n") != std::string::npos)
      throw ContractError("dataset ids must be non-empty without whitespace");
    const std::string image = it.id + ".png", mask = it.id + "_mask.png";
    write_file((root / image).string(), encode_png_image(it.image));
    write_file((root / mask).string(), encode_png_mask(it.gt));
    index << it.id << ' ' << image << ' ' << mask << '\n';
  }
  if (!index) throw std::runtime_error("write failed: dataset index in " + dir);
}

}  // namespace fbrs
