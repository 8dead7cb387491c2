#include "doctest.h"

#include "fbrs/image_ops.hpp"
#include "fbrs/synthetic.hpp"

#include <cmath>

using namespace fbrs;

TEST_CASE("same seed gives an identical dataset") {
  const auto a = gen_synthetic_dataset(20, 64, 72, 11);
  const auto b = gen_synthetic_dataset(20, 64, 72, 11);
  CHECK(a == b);
  const auto c = gen_synthetic_dataset(5, 64, 72, 11);
  for (int i = 0; i < 5; ++i) CHECK(c[i] == a[i]);
  const auto d = gen_synthetic_dataset(5, 64, 72, 12);
  CHECK_FALSE(d[0] == a[0]);
}

TEST_CASE("generator constraints hold over 1000 samples") {
  const auto data = gen_synthetic_dataset(1000, 88, 88, 2024);
  double fraction = 0;
  int kinds[3] = {0, 0, 0};
  for (const auto& s : data) {
    REQUIRE(s.gt.count() >= 25);
    CHECK(s.image.height() == 88);
    CHECK(s.meta.size() >= 1);
    CHECK(s.meta.size() <= 3);
    int targets = 0;
    for (const auto& m : s.meta) {
      targets += m.target;
      ++kinds[static_cast<int>(m.kind)];
      CHECK(m.cy - m.radius >= 0);
      CHECK(m.cx - m.radius >= 0);
      CHECK(m.cy + m.radius <= 88);
      CHECK(m.cx + m.radius <= 88);
    }
    CHECK(targets == 1);
    int overlap = 0;
    for (std::size_t i = 0; i < s.gt.data.size(); ++i) overlap += s.gt.data[i] && s.others.data[i];
    CHECK(overlap == 0);
    fraction += static_cast<double>(s.gt.count()) / s.gt.data.size();
  }
  fraction /= data.size();
  MESSAGE("mean foreground fraction " << fraction);
  CHECK(fraction >= 0.05);
  CHECK(fraction <= 0.4);
  for (int k : kinds) CHECK(k > 100);
}

TEST_CASE("edges are anti-aliased") {
  const auto disk = centered_disk_sample(64, 64, 15.3);
  int partial = 0;
  for (float v : disk.image.data.plane(0)) partial += v > 0.36f && v < 0.87f;
  CHECK(partial > 20);
  CHECK(disk.gt(32, 32) == 1);
  CHECK(disk.gt(0, 0) == 0);
  CHECK(std::abs(static_cast<double>(disk.gt.count()) - 3.14159265 * 15.3 * 15.3) < 20);
}

TEST_CASE("identity and involution augments") {
  const auto s = gen_synthetic_dataset(1, 64, 80, 3)[0];
  CHECK(apply_augment(s, {}) == s);
  const AugmentParams h{true, false, 1.0}, v{false, true, 1.0};
  CHECK(apply_augment(apply_augment(s, h), h).image == s.image);
  CHECK(apply_augment(apply_augment(s, h), h).gt == s.gt);
  CHECK(apply_augment(apply_augment(s, v), v).gt == s.gt);
}

TEST_CASE("gt bounding box follows flips and scaling") {
  SeededRng rng(8);
  const auto data = gen_synthetic_dataset(30, 64, 80, 4);
  for (const auto& s : data) {
    int y0, x0, y1, x1;
    REQUIRE(mask_bbox(s.gt, y0, x0, y1, x1));
    AugmentParams p;
    const auto out = augment(s, rng, 0.75, 1.25, &p);
    CHECK(p.scale >= 0.75);
    CHECK(p.scale <= 1.25);
    const double fy = static_cast<double>(out.gt.height) / s.gt.height;
    const double fx = static_cast<double>(out.gt.width) / s.gt.width;
    double ey0 = y0, ey1 = y1, ex0 = x0, ex1 = x1;
    if (p.hflip) {
      ex0 = s.gt.width - x1;
      ex1 = s.gt.width - x0;
    }
    if (p.vflip) {
      ey0 = s.gt.height - y1;
      ey1 = s.gt.height - y0;
    }
    int ay0, ax0, ay1, ax1;
    REQUIRE(mask_bbox(out.gt, ay0, ax0, ay1, ax1));
    CHECK(std::abs(ay0 - ey0 * fy) <= 1.0);
    CHECK(std::abs(ay1 - ey1 * fy) <= 1.0);
    CHECK(std::abs(ax0 - ex0 * fx) <= 1.0);
    CHECK(std::abs(ax1 - ex1 * fx) <= 1.0);
    CHECK(out.image.height() == out.gt.height);
    CHECK(out.image.width() == out.gt.width);
  }
}

TEST_CASE("random crops keep part of the object") {
  SeededRng rng(1);
  const auto data = gen_synthetic_dataset(40, 88, 88, 5);
  for (const auto& s : data) {
    const auto c = random_crop(s, 64, 64, rng);
    CHECK(c.image.height() == 64);
    CHECK(c.image.width() == 64);
    CHECK(c.gt.any());
  }
  const auto small = apply_augment(data[0], {false, false, 0.5});
  const auto padded = random_crop(small, 64, 64, rng);
  CHECK(padded.gt.count() == small.gt.count());
}

TEST_CASE("bad arguments are contract errors") {
  CHECK_THROWS_AS(gen_synthetic_dataset(0, 64, 64, 1), ContractError);
  CHECK_THROWS_AS(gen_synthetic_dataset(1, 16, 64, 1), ContractError);
  const auto s = gen_synthetic_dataset(1, 64, 64, 1)[0];
  CHECK_THROWS_AS(apply_augment(s, {false, false, 0.0}), ContractError);
}
