#include "fbrs/benchmark.hpp"

#include "fbrs/synthetic.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <sstream>
#include <thread>

namespace fbrs {

namespace {

ImageResult run_one(const std::shared_ptr<const Model>& model, const DatasetItem& item, const EngineConfig& cfg,
                    const BenchmarkOptions& opts) {
  ImageResult out;
  Session session(model, item.image, cfg, item.id);
  auto handler = [&](const Click& c) {
    auto update = session.add_click(c);
    out.refine_seconds.push_back(update.diagnostics.refinement.seconds);
    return update.mask;
  };
  out.trace = simulate_session(handler, item.gt, opts.cap, opts.stop_iou, item.id);
  out.trace.variant = to_string(cfg.brs.variant);
  out.refine_seconds.resize(out.trace.clicks.size());
  if (opts.oracle && is_fbrs(cfg.brs.variant) && !session.clicks().empty())
    out.oracle = session.oracle(item.gt, opts.oracle_iters);
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

BenchmarkRun run_benchmark(std::shared_ptr<const Model> model, const std::vector<DatasetItem>& items,
                           const EngineConfig& cfg, const BenchmarkOptions& opts, const ReportConfig& report_cfg) {
  if (!model) throw ContractError("benchmark needs a model");
  if (items.empty()) throw ContractError("benchmark needs at least one image");
  if (opts.cap < 1) throw ContractError("click cap must be >= 1");
  cfg.validate();

  BenchmarkRun run;
  run.images.resize(items.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(items.size());
  auto worker = [&] {
    for (std::size_t i = next++; i < items.size(); i = next++) {
      try {
        run.images[i] = run_one(model, items[i], cfg, opts);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t n_threads =
      std::min<std::size_t>(items.size(), opts.threads > 0 ? static_cast<std::size_t>(opts.threads) : hw);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<SessionTrace> traces;
  double refine = 0;
  std::size_t clicks = 0;
  for (const auto& r : run.images) {
    traces.push_back(r.trace);
    for (double s : r.refine_seconds) refine += s;
    clicks += r.refine_seconds.size();
  }
  run.mean_refine_seconds = clicks ? refine / static_cast<double>(clicks) : 0.0;
  run.report = compute_report(traces, report_cfg);
  auto& fp = run.report.fingerprint;
  fp["variant"] = to_string(cfg.brs.variant);
  fp["lambda"] = format_double(cfg.brs.lambda);
  fp["click_limit"] = std::to_string(cfg.brs.click_limit);
  fp["max_lbfgs_iters"] = std::to_string(cfg.brs.max_lbfgs_iters);
  fp["zoom"] = cfg.zoom ? "true" : "false";
  fp["zoom_target"] = std::to_string(cfg.zoom_target);
  fp["checkpoint"] = cfg.checkpoint;
  return run;
}

std::vector<DatasetItem> synthetic_items(int n, int height, int width, std::uint64_t seed) {
  std::vector<DatasetItem> items;
  items.reserve(static_cast<std::size_t>(std::max(n, 0)));
  for (auto& s : gen_synthetic_dataset(n, height, width, seed)) {
    char id[16];
    std::snprintf(id, sizeof id, "syn%05zu", items.size());
    items.push_back({id, std::move(s.image), std::move(s.gt)});
  }
  return items;
}

}  // namespace fbrs
