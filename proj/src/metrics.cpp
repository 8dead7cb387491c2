#include "fbrs/metrics.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

namespace fbrs {

double iou(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b)) throw ContractError("iou: mask shapes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const bool x = a.data[i] != 0, y = b.data[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

SessionTrace simulate_session(const ClickHandler& add_click, const BinaryMask& gt, int cap, double target_iou,
                              std::string image_id) {
  if (!gt.any()) throw ContractError("ground truth mask is empty");
  if (cap < 1) throw ContractError("click cap must be >= 1");
  SessionTrace trace;
  trace.image_id = std::move(image_id);
  BinaryMask pred(gt.height, gt.width);
  while (static_cast<int>(trace.clicks.size()) < cap) {
    auto click = next_click(pred, gt, trace.clicks);
    if (!click) break;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      pred = add_click(*click);
    } catch (const std::exception& e) {
      trace.truncated = true;
      trace.error = e.what();
      break;
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    trace.clicks.push_back(*click);
    trace.seconds.push_back(std::max(dt, 1e-9));
    trace.ious.push_back(iou(pred, gt));
    if (trace.ious.back() >= target_iou) break;
  }
  return trace;
}

int clicks_to_reach(const std::vector<double>& ious, double target, int cap) {
  const int n = std::min<int>(cap, static_cast<int>(ious.size()));
  for (int i = 0; i < n; ++i)
    if (ious[i] >= target) return i + 1;
  return cap;
}

std::string target_key(double target) {
  std::ostringstream os;
  os << std::lround(target * 100.0);
  return os.str();
}

BenchmarkReport compute_report(const std::vector<SessionTrace>& traces, const ReportConfig& cfg) {
  if (traces.empty()) throw ContractError("no traces to report");
  if (cfg.cap < 1 || cfg.long_cap < cfg.cap) throw ContractError("caps must satisfy 1 <= cap <= long_cap");
  BenchmarkReport r;
  r.images = traces.size();
  r.cap = cfg.cap;
  r.long_cap = cfg.long_cap;
  r.failure_target = cfg.failure_target;

  // Long-cap figures are only known when every trace hit the target or ran long enough.
  auto known = [&](const SessionTrace& t, double tau) {
    return static_cast<int>(t.ious.size()) >= cfg.long_cap ||
           clicks_to_reach(t.ious, tau, cfg.long_cap) <= static_cast<int>(t.ious.size());
  };
  bool long_known = true;
  for (const auto& t : traces) long_known = long_known && known(t, cfg.failure_target);
  for (double tau : cfg.targets) {
    double sum = 0, sum_long = 0;
    bool tau_known = true;
    for (const auto& t : traces) {
      sum += clicks_to_reach(t.ious, tau, cfg.cap);
      sum_long += clicks_to_reach(t.ious, tau, cfg.long_cap);
      tau_known = tau_known && known(t, tau);
    }
    r.noc[target_key(tau)] = sum / static_cast<double>(traces.size());
    if (tau_known) r.noc100[target_key(tau)] = sum_long / static_cast<double>(traces.size());
  }
  auto reached_within = [&](const SessionTrace& t, int n) {
    const int m = std::min<int>(n, static_cast<int>(t.ious.size()));
    for (int i = 0; i < m; ++i)
      if (t.ious[i] >= cfg.failure_target) return true;
    return false;
  };
  for (const auto& t : traces) {
    r.failures_at_cap += !reached_within(t, cfg.cap);
    r.failures_at_long_cap += !reached_within(t, cfg.long_cap);
  }
  if (!long_known) r.failures_at_long_cap = -1;

  std::size_t longest = static_cast<std::size_t>(cfg.cap), clicks = 0;
  for (const auto& t : traces) {
    longest = std::max(longest, t.ious.size());
    clicks += t.seconds.size();
    for (double s : t.seconds) r.total_seconds += s;
  }
  r.spc = clicks ? r.total_seconds / static_cast<double>(clicks) : 0.0;
  r.mean_iou.assign(longest, 0.0);
  for (const auto& t : traces) {
    for (std::size_t i = 0; i < longest; ++i) {
      const double v = i < t.ious.size() ? t.ious[i] : (t.ious.empty() ? 0.0 : t.ious.back());
      r.mean_iou[i] += v;
    }
  }
  for (auto& v : r.mean_iou) v /= static_cast<double>(traces.size());
  return r;
}

std::string report_to_json(const BenchmarkReport& r) {
  nlohmann::json j;
  j["images"] = r.images;
  j["noc"] = r.noc;
  j["noc100"] = r.noc100;
  j["failures_at_cap"] = r.failures_at_cap;
  j["failures_at_long_cap"] = r.failures_at_long_cap;
  j["cap"] = r.cap;
  j["long_cap"] = r.long_cap;
  j["failure_target"] = r.failure_target;
  j["mean_iou"] = r.mean_iou;
  j["spc"] = r.spc;
  j["total_seconds"] = r.total_seconds;
  j["fingerprint"] = r.fingerprint;
  return j.dump(2);
}

BenchmarkReport report_from_json(const std::string& text) {
  BenchmarkReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    r.images = j.at("images").get<std::size_t>();
    r.noc = j.at("noc").get<std::map<std::string, double>>();
    r.noc100 = j.at("noc100").get<std::map<std::string, double>>();
    r.failures_at_cap = j.at("failures_at_cap").get<int>();
    r.failures_at_long_cap = j.at("failures_at_long_cap").get<int>();
    r.cap = j.at("cap").get<int>();
    r.long_cap = j.at("long_cap").get<int>();
    r.failure_target = j.at("failure_target").get<double>();
    r.mean_iou = j.at("mean_iou").get<std::vector<double>>();
    r.spc = j.at("spc").get<double>();
    r.total_seconds = j.at("total_seconds").get<double>();
    r.fingerprint = j.at("fingerprint").get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("malformed report: ") + e.what());
  }
  return r;
}

void emit_report(const BenchmarkReport& report, const std::string& path, const std::optional<std::string>& curve_path) {
  {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write report to " + path);
    os << report_to_json(report) << '\n';
    if (!os) throw std::runtime_error("write failed: " + path);
  }
  if (curve_path) {
    std::ofstream os(*curve_path);
    if (!os) throw std::runtime_error("cannot write curve table to " + *curve_path);
    os.precision(17);
    os << "click,mean_iou\n";
    for (std::size_t i = 0; i < report.mean_iou.size(); ++i) os << i + 1 << ',' << report.mean_iou[i] << '\n';
    if (!os) throw std::runtime_error("write failed: " + *curve_path);
  }
}

BenchmarkReport load_report(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read report " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return report_from_json(ss.str());
}

}  // namespace fbrs
