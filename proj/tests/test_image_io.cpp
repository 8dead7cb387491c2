#include "doctest.h"

#include "fbrs/image_io.hpp"
#include "fbrs/synthetic.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

using namespace fbrs;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("fbrs_io_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  return p;
}

BinaryMask random_mask(std::mt19937_64& rng, int h, int w, double p) {
  std::bernoulli_distribution b(p);
  BinaryMask m(h, w);
  for (auto& v : m.data) v = b(rng);
  return m;
}

}  // namespace

TEST_CASE("RLE round trips random masks and keeps the pixel count") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const int h = 1 + static_cast<int>(rng() % 40), w = 1 + static_cast<int>(rng() % 40);
    const auto m = random_mask(rng, h, w, (i % 5) / 4.0);
    const auto r = rle_encode(m);
    CHECK(rle_decode(r) == m);
    std::size_t fg = 0, total = 0;
    for (std::size_t k = 0; k < r.counts.size(); ++k) {
      total += r.counts[k];
      if (k % 2 == 1) fg += r.counts[k];
      if (k > 0) CHECK(r.counts[k] > 0);
    }
    CHECK(total == m.data.size());
    CHECK(fg == m.count());
  }
}

TEST_CASE("RLE layout") {
  BinaryMask m(2, 3);
  m(0, 0) = 1;
  m(1, 1) = 1;
  m(1, 2) = 1;
  CHECK(rle_encode(m).counts == std::vector<std::uint32_t>{0, 1, 3, 2});
  CHECK(rle_encode(BinaryMask(2, 2)).counts == std::vector<std::uint32_t>{4});
  CHECK(rle_encode(BinaryMask(0, 0)).counts == std::vector<std::uint32_t>{0});
  CHECK_THROWS_AS(rle_decode(Rle{2, 2, {3}}), ContractError);
  CHECK_THROWS_AS(rle_decode(Rle{2, 2, {3, 2}}), ContractError);
}

TEST_CASE("PNG image and mask round trips") {
  const auto s = gen_synthetic_dataset(1, 40, 50, 9)[0];
  const auto img = decode_png_image(encode_png_image(s.image));
  REQUIRE(img.height() == 40);
  REQUIRE(img.width() == 50);
  for (std::size_t i = 0; i < img.data.data.size(); ++i)
    CHECK(std::abs(img.data.data[i] - s.image.data.data[i]) <= 0.5f / 255.0f + 1e-6f);
  // 8-bit values survive a second trip exactly.
  CHECK(decode_png_image(encode_png_image(img)) == img);
  CHECK(decode_png_mask(encode_png_mask(s.gt)) == s.gt);
}

TEST_CASE("probability PNG quantizes to the nearest level") {
  Tensor<float> p(1, 1, 4);
  p.data = {0.0f, 0.5f, 1.0f, 0.2f};
  const auto bytes = encode_png_prob(p);
  const auto m = decode_png_mask(bytes);
  CHECK(m.data == std::vector<std::uint8_t>{0, 1, 1, 0});
  CHECK_THROWS_AS(encode_png_prob(Tensor<float>(2, 1, 1)), ContractError);
}

TEST_CASE("garbage is not a PNG") {
  const Bytes junk{1, 2, 3, 4, 5};
  CHECK_THROWS_AS(decode_png_image(junk), ContractError);
  CHECK_THROWS_AS(decode_png_mask(junk), ContractError);
}

TEST_CASE("dataset write and load") {
  const auto dir = temp_dir("ds");
  std::vector<DatasetItem> items;
  for (const auto& s : gen_synthetic_dataset(3, 36, 40, 4))
    items.push_back({"img" + std::to_string(items.size()), decode_png_image(encode_png_image(s.image)), s.gt});
  write_dataset(dir.string(), items);
  const auto back = load_dataset(dir.string());
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].id == items[i].id);
    CHECK(back[i].image == items[i].image);
    CHECK(back[i].gt == items[i].gt);
  }
  {
    std::ofstream bad(dir / "index.txt", std::ios::app);
    bad << "only_two fields\n";
  }
  CHECK_THROWS_AS(load_dataset(dir.string()), ContractError);
  CHECK_THROWS_AS(write_dataset(dir.string(), {{"has space", items[0].image, items[0].gt}}), ContractError);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_dataset(dir.string()), std::runtime_error);
}
