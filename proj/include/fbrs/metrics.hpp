#pragma once

#include "fbrs/clicks.hpp"
#include "fbrs/tensor.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fbrs {

/// |a & b| / |a | b|; 1 when both are empty.
double iou(const BinaryMask& a, const BinaryMask& b);

struct SessionTrace {
  std::string image_id;
  std::vector<double> ious;     // after each click
  ClickSet clicks;
  std::vector<double> seconds;  // per click
  std::string variant;
  bool truncated = false;  // the engine failed mid-session
  std::string error;

  friend bool operator==(const SessionTrace&, const SessionTrace&) = default;
};

/// Places one click and returns the updated mask.
using ClickHandler = std::function<BinaryMask(const Click&)>;

/// Simulated user: next_click on the current error, then `add_click`, until
/// IoU >= target_iou or `cap` clicks. Exceptions from the handler end the
/// trace early with `truncated` set.
SessionTrace simulate_session(const ClickHandler& add_click, const BinaryMask& gt, int cap, double target_iou,
                              std::string image_id = {});

/// 1-based index of the first click with IoU >= target within the first `cap`
/// clicks; `cap` when never reached.
int clicks_to_reach(const std::vector<double>& ious, double target, int cap);

struct ReportConfig {
  std::vector<double> targets{0.85, 0.90};
  int cap = 20;
  int long_cap = 100;        // NoC100 and the second failure count
  double failure_target = 0.90;
};

struct BenchmarkReport {
  std::size_t images = 0;
  std::map<std::string, double> noc;     // "85" -> mean clicks, capped at `cap`
  std::map<std::string, double> noc100;  // same, capped at `long_cap`; only when known
  int failures_at_cap = 0;       // images not reaching failure_target within cap
  int failures_at_long_cap = 0;  // ... within long_cap; -1 when traces stopped short of it
  int cap = 20;
  int long_cap = 100;
  double failure_target = 0.90;
  std::vector<double> mean_iou;  // per click index up to max(cap, longest trace); short traces padded
  double spc = 0;                // mean seconds per issued click
  double total_seconds = 0;
  std::map<std::string, std::string> fingerprint;  // variant, lambda, click limit, ...

  friend bool operator==(const BenchmarkReport&, const BenchmarkReport&) = default;
};

/// Key used in the noc maps for a threshold, e.g. 0.85 -> "85".
std::string target_key(double target);

BenchmarkReport compute_report(const std::vector<SessionTrace>& traces, const ReportConfig& cfg = {});

std::string report_to_json(const BenchmarkReport& report);
BenchmarkReport report_from_json(const std::string& text);

/// Writes the JSON report to `path`; with `curve_path`, also a CSV table
/// "click,mean_iou" with one row per click index.
void emit_report(const BenchmarkReport& report, const std::string& path,
                 const std::optional<std::string>& curve_path = std::nullopt);
BenchmarkReport load_report(const std::string& path);

}  // namespace fbrs
