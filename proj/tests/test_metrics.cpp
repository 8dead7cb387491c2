#include "doctest.h"

#include "fbrs/metrics.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

using namespace fbrs;

namespace {

SessionTrace trace_of(std::vector<double> ious) {
  SessionTrace t;
  t.ious = std::move(ious);
  t.seconds.assign(t.ious.size(), 0.01);
  for (std::size_t i = 0; i < t.ious.size(); ++i)
    t.clicks.push_back(Click{static_cast<int>(i), 0, ClickLabel::kPositive, static_cast<int>(i) + 1});
  return t;
}

int brute_noc(const std::vector<double>& ious, double tau, int cap) {
  int first = cap;
  for (int i = static_cast<int>(ious.size()) - 1; i >= 0; --i)
    if (i < cap && ious[i] >= tau) first = i + 1;
  return first;
}

}  // namespace

TEST_CASE("iou of simple masks") {
  BinaryMask a(20, 30), b(20, 30);
  CHECK(iou(a, b) == 1.0);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) a(y, x) = 1;
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, b) == 0.0);
  for (int y = 0; y < 10; ++y)
    for (int x = 5; x < 15; ++x) b(y, x) = 1;
  CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK_THROWS_AS(iou(a, BinaryMask(20, 31)), ContractError);
}

TEST_CASE("clicks to reach a target") {
  CHECK(clicks_to_reach({0.5, 0.8, 0.92}, 0.9, 20) == 3);
  CHECK(clicks_to_reach({0.5, 0.8}, 0.9, 20) == 20);
  CHECK(clicks_to_reach({0.95}, 0.9, 20) == 1);
  std::vector<double> late(30, 0.1);
  late[24] = 0.95;
  CHECK(clicks_to_reach(late, 0.9, 20) == 20);
  CHECK(clicks_to_reach(late, 0.9, 100) == 25);
}

TEST_CASE("report aggregates NoC, failures and the curve") {
  std::vector<double> never(20, 0.5);
  const auto r = compute_report({trace_of({0.7, 0.86, 0.91}), trace_of({0.6, 0.7, 0.8, 0.95}), trace_of(never)});
  CHECK(r.images == 3);
  CHECK(r.noc.at("85") == doctest::Approx((2 + 4 + 20) / 3.0));
  CHECK(r.noc.at("90") == doctest::Approx((3 + 4 + 20) / 3.0));
  CHECK(r.failures_at_cap == 1);
  CHECK(r.failures_at_long_cap == -1);  // the failing trace stopped at 20
  CHECK(r.noc100.empty());
  REQUIRE(r.mean_iou.size() == 20);
  CHECK(r.mean_iou[0] == doctest::Approx((0.7 + 0.6 + 0.5) / 3));
  CHECK(r.mean_iou[19] == doctest::Approx((0.91 + 0.95 + 0.5) / 3));
  CHECK(r.spc == doctest::Approx(0.01));
  CHECK(r.total_seconds == doctest::Approx(0.27));
}

TEST_CASE("two images with NoC 2 and 4 average to 3") {
  const auto r = compute_report({trace_of({0.5, 0.95}), trace_of({0.1, 0.2, 0.3, 0.99})});
  CHECK(r.noc.at("90") == 3.0);
  CHECK(r.failures_at_cap == 0);
  CHECK(r.failures_at_long_cap == 0);
  CHECK(r.noc100.at("90") == 3.0);
}

TEST_CASE("long traces give NoC100 and both failure counts") {
  std::vector<double> slow(100, 0.3);
  slow[59] = 0.93;
  slow.resize(60);
  const std::vector<double> hopeless(100, 0.4);
  const auto r = compute_report({trace_of(slow), trace_of(hopeless), trace_of({0.92})});
  CHECK(r.noc.at("90") == doctest::Approx((20 + 20 + 1) / 3.0));
  CHECK(r.noc100.at("90") == doctest::Approx((60 + 100 + 1) / 3.0));
  CHECK(r.failures_at_cap == 2);
  CHECK(r.failures_at_long_cap == 1);
  CHECK(r.mean_iou.size() == 100);
}

TEST_CASE("report properties on random traces") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<SessionTrace> traces;
    const int n = 1 + trial % 7;
    for (int i = 0; i < n; ++i) {
      std::vector<double> ious;
      const int len = 1 + static_cast<int>(u(rng) * 100);
      for (int k = 0; k < len; ++k) ious.push_back(u(rng));
      traces.push_back(trace_of(ious));
    }
    const auto r = compute_report(traces);
    REQUIRE(r.noc.at("85") <= r.noc.at("90"));
    REQUIRE(r.noc.at("90") <= 20.0);
    REQUIRE(r.failures_at_cap <= n);
    if (r.failures_at_long_cap >= 0) REQUIRE(r.failures_at_long_cap <= r.failures_at_cap);
    double want = 0;
    for (const auto& t : traces) want += brute_noc(t.ious, 0.9, 20);
    REQUIRE(r.noc.at("90") == doctest::Approx(want / n).epsilon(1e-12));
    // The curve is rebuilt from stored traces only.
    REQUIRE(compute_report(traces) == r);
  }
}

TEST_CASE("simulated sessions stop at the target or the cap") {
  BinaryMask gt(40, 40);
  for (int y = 10; y < 30; ++y)
    for (int x = 10; x < 30; ++x) gt(y, x) = 1;

  SUBCASE("perfect on the third click") {
    int calls = 0;
    const auto t = simulate_session(
        [&](const Click&) {
          ++calls;
          BinaryMask m(40, 40);
          if (calls == 3) m = gt;
          else m(20, 20) = 1;
          return m;
        },
        gt, 20, 0.9);
    CHECK(t.ious.size() == 3);
    CHECK(t.clicks.size() == 3);
    CHECK(t.ious.back() == 1.0);
    for (double s : t.seconds) CHECK(s > 0);
  }
  SUBCASE("never good enough") {
    const auto t = simulate_session([&](const Click&) { return BinaryMask(40, 40); }, gt, 20, 0.9);
    CHECK(t.ious.size() == 20);
    CHECK_FALSE(t.truncated);
  }
  SUBCASE("handler failure truncates the trace") {
    int calls = 0;
    const auto t = simulate_session(
        [&](const Click&) -> BinaryMask {
          if (++calls == 2) throw std::runtime_error("boom");
          return BinaryMask(40, 40);
        },
        gt, 20, 0.9);
    CHECK(t.truncated);
    CHECK(t.ious.size() == 1);
    CHECK(t.error == "boom");
  }
  SUBCASE("deterministic handler gives identical traces") {
    auto handler = [&](const Click& c) {
      BinaryMask m(40, 40);
      for (int y = std::max(0, c.u - 6); y < std::min(40, c.u + 6); ++y)
        for (int x = std::max(0, c.v - 6); x < std::min(40, c.v + 6); ++x) m(y, x) = 1;
      return m;
    };
    auto a = simulate_session(handler, gt, 20, 0.95), b = simulate_session(handler, gt, 20, 0.95);
    a.seconds.clear();
    b.seconds.clear();
    CHECK(a == b);
  }
}

TEST_CASE("report round trip through JSON and the curve table") {
  auto r = compute_report({trace_of({0.5, 0.95}), trace_of({0.1, 0.2, 0.3, 0.99 / 3.0})});
  r.fingerprint = {{"variant", "fbrs_b"}, {"lambda", "0.0001"}, {"click_limit", "8"}};
  CHECK(report_from_json(report_to_json(r)) == r);
  const auto dir = std::filesystem::temp_directory_path() / "fbrs_metrics_test";
  std::filesystem::create_directories(dir);
  const auto json_path = (dir / "report.json").string(), csv_path = (dir / "curve.csv").string();
  emit_report(r, json_path, csv_path);
  CHECK(load_report(json_path) == r);
  std::ifstream is(csv_path);
  std::string line;
  int rows = -1;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == r.cap);
  CHECK(report_to_json(r).find("\"variant\": \"fbrs_b\"") != std::string::npos);
  std::filesystem::remove_all(dir);
}
