#pragma once

#include "fbrs/engine.hpp"
#include "fbrs/image_io.hpp"
#include "fbrs/metrics.hpp"

#include <memory>
#include <optional>
#include <vector>

namespace fbrs {

struct BenchmarkOptions {
  int cap = 20;
  double stop_iou = 0.90;  // a session ends once reached; above 1 every click is issued
  int threads = 0;         // 0: hardware concurrency
  bool oracle = false;     // run the oracle on each final session state (fbrs variants)
  int oracle_iters = 100;
};

struct ImageResult {
  SessionTrace trace;
  std::vector<double> refine_seconds;  // optimizer time per click
  std::optional<Session::OracleResult> oracle;
};

struct BenchmarkRun {
  std::vector<ImageResult> images;  // same order as the input items
  BenchmarkReport report;
  double mean_refine_seconds = 0;   // over all issued clicks
};

/// Simulated sessions over `items`, one Session per image on the shared
/// model. Sessions run in parallel; results do not depend on the thread count.
BenchmarkRun run_benchmark(std::shared_ptr<const Model> model, const std::vector<DatasetItem>& items,
                           const EngineConfig& cfg, const BenchmarkOptions& opts = {},
                           const ReportConfig& report_cfg = {});

/// Synthetic images as dataset items with ids "syn00000", ...
std::vector<DatasetItem> synthetic_items(int n, int height, int width, std::uint64_t seed);

}  // namespace fbrs
