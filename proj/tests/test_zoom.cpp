#include "doctest.h"

#include "fbrs/image_ops.hpp"
#include "fbrs/zoom.hpp"

#include <random>

using namespace fbrs;

namespace {

BinaryMask box_mask(int h, int w, int y0, int x0, int y1, int x1) {
  BinaryMask m(h, w);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m(y, x) = 1;
  return m;
}

bool contains(const CropRect& outer, const CropRect& inner) {
  return outer.y0 <= inner.y0 && outer.x0 <= inner.x0 && outer.y1 >= inner.y1 && outer.x1 >= inner.x1;
}

}  // namespace

TEST_CASE("crop grows the bbox by a fifth per side") {
  ZoomState st;
  const auto r = compute_crop(box_mask(100, 200, 40, 10, 60, 50), 100, 200, st);
  REQUIRE(r);
  CHECK(r->x0 == 2);
  CHECK(r->x1 == 58);
  CHECK(r->y0 == 36);
  CHECK(r->y1 == 64);
  CHECK(r->scale == doctest::Approx(400.0 / 56));
  CHECK(r->out_width() == 400);
}

TEST_CASE("crop is clamped at the image edges") {
  ZoomState st;
  const auto r = compute_crop(box_mask(50, 60, 0, 45, 20, 60), 50, 60, st);
  REQUIRE(r);
  CHECK(r->y0 == 0);
  CHECK(r->x1 == 60);
  CHECK(r->y1 == 24);
  CHECK(r->x0 == 42);
}

TEST_CASE("crop scale maps the longest side to the target") {
  ZoomState st;
  // bbox 100 x 160 exactly once expanded: 100 = 72 + 2*14, 160 = 114 + 2*23
  const auto r = compute_crop(box_mask(300, 300, 100, 50, 172, 164), 300, 300, st);
  REQUIRE(r);
  CHECK(r->height() == 100);
  CHECK(r->width() == 160);
  CHECK(r->scale == 2.5);
  CHECK(r->out_height() == 250);
  CHECK(r->out_width() == 400);
}

TEST_CASE("empty mask gives no crop") {
  CHECK_FALSE(compute_crop(BinaryMask(40, 40), 40, 40, ZoomState{}).has_value());
}

TEST_CASE("crop contains the bbox and is monotone in the mask") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> u(0, 63);
  ZoomState st;
  st.target_long_side = 64;
  for (int trial = 0; trial < 300; ++trial) {
    int y0 = u(rng), y1 = u(rng), x0 = u(rng), x1 = u(rng);
    if (y0 > y1) std::swap(y0, y1);
    if (x0 > x1) std::swap(x0, x1);
    const auto small = box_mask(64, 64, y0, x0, y1 + 1, x1 + 1);
    auto big = small;
    big(u(rng), u(rng)) = 1;
    const auto rs = compute_crop(small, 64, 64, st), rb = compute_crop(big, 64, 64, st);
    REQUIRE(rs);
    REQUIRE(rb);
    REQUIRE(contains(*rs, CropRect{x0, y0, x1 + 1, y1 + 1, 1.0}));
    REQUIRE(contains(*rb, *rs));
  }
}

TEST_CASE("clicks outside the rect grow it") {
  ZoomState st;
  st.active = true;
  st.rect = CropRect{20, 20, 60, 60, 10.0};
  const Click inside{30, 30, ClickLabel::kPositive, 4};
  CHECK(update_on_click(st, inside, 200, 200) == st);

  const Click right{40, 89, ClickLabel::kPositive, 4};  // 30 px right of the rect
  const auto grown = update_on_click(st, right, 200, 200);
  REQUIRE(grown.rect);
  CHECK(grown.rect->contains(40, 89));
  CHECK(grown.rect->x1 > 90);
  CHECK(grown.rect->x0 == 20);
  CHECK(grown.rect->y0 == 20);
  CHECK(grown.rect->y1 == 60);
  CHECK(grown.rect->scale == doctest::Approx(400.0 / grown.rect->width()));

  const Click edge{199, 30, ClickLabel::kNegative, 4};
  const auto clamped = update_on_click(st, edge, 200, 200);
  CHECK(clamped.rect->y1 == 200);
  CHECK(clamped.rect->contains(199, 30));

  ZoomState idle;
  CHECK(update_on_click(idle, right, 200, 200) == idle);
}

TEST_CASE("small crops are not usable") {
  ZoomState st;
  CHECK_FALSE(crop_usable(CropRect{0, 0, 7, 40, 1.0}, st));
  CHECK(crop_usable(CropRect{0, 0, 8, 8, 1.0}, st));
}

TEST_CASE("identity crop round trip is exact") {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n(0.0f, 3.0f);
  Tensor<float> logits(1, 37, 53);
  for (auto& v : logits.data) v = n(rng);
  const CropRect whole{0, 0, 53, 37, 1.0};
  CHECK(apply_crop(logits, whole) == logits);
  CHECK(paste_back(apply_crop(logits, whole), whole, Tensor<float>(1, 37, 53, 9.0f)) == logits);
}

TEST_CASE("constant values survive a zoomed round trip") {
  ZoomState st;
  const auto r = compute_crop(box_mask(64, 64, 20, 25, 31, 40), 64, 64, st);
  REQUIRE(r);
  const Tensor<float> constant(2, 64, 64, 0.625f);
  const auto cropped = apply_crop(constant, *r);
  for (float v : cropped.data) REQUIRE(v == 0.625f);
  const auto pasted = paste_back(cropped, *r, Tensor<float>(2, 64, 64, -4.0f));
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) REQUIRE(pasted(c, y, x) == (r->contains(y, x) ? 0.625f : -4.0f));
}

TEST_CASE("clicks keep their pixel through crop coordinates") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> u(0, 99);
  ZoomState st;
  st.target_long_side = 120;
  for (int trial = 0; trial < 200; ++trial) {
    int y0 = u(rng), y1 = u(rng), x0 = u(rng), x1 = u(rng);
    if (y0 > y1) std::swap(y0, y1);
    if (x0 > x1) std::swap(x0, x1);
    const auto r = compute_crop(box_mask(100, 100, y0, x0, y1 + 1, x1 + 1), 100, 100, st);
    REQUIRE(r);
    if (r->scale < 1.0) continue;  // only zooming in is one-to-one
    for (int y = r->y0; y < r->y1; ++y)
      for (int x = r->x0; x < r->x1; ++x) {
        const Click c{y, x, ClickLabel::kPositive, 1};
        const auto cc = to_crop(c, *r);
        REQUIRE(cc);
        REQUIRE(cc->u < r->out_height());
        REQUIRE(cc->v < r->out_width());
        REQUIRE(to_full(*cc, *r) == c);
      }
    CHECK_FALSE(to_crop(Click{r->y1, r->x0, ClickLabel::kPositive, 1}, *r).has_value());
  }
}

TEST_CASE("zooming in recovers a thin structure lost at low resolution") {
  // Stand-in predictor with an output stride of 4: bilinear down then up.
  auto predict = [](const Tensor<float>& x) {
    const auto low = resize_bilinear(x, x.height / 4, x.width / 4);
    return resize_bilinear(low, x.height, x.width);
  };
  Tensor<float> image(1, 80, 80, 0.0f);
  for (int y = 20; y < 60; ++y)
    for (int x = 32; x < 34; ++x) image(0, y, x) = 1.0f;
  auto count_hits = [&](const Tensor<float>& prob) {
    int hits = 0;
    for (int y = 20; y < 60; ++y) hits += prob(0, y, 32) > 0.5f || prob(0, y, 33) > 0.5f;
    return hits;
  };
  const auto plain = predict(image);
  CHECK(count_hits(plain) == 0);

  const CropRect r{22, 12, 44, 68, 2.5};  // 56 x 22 around the line
  const auto zoomed = paste_back(predict(apply_crop(image, r)), r, plain);
  CHECK(count_hits(zoomed) >= 30);
}
