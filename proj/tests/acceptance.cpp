#include "CLI11.hpp"

#include "fbrs/benchmark.hpp"
#include "fbrs/brs.hpp"
#include "fbrs/checkpoint.hpp"
#include "fbrs/lbfgs.hpp"
#include "fbrs/losses.hpp"
#include "fbrs/metrics.hpp"
#include "fbrs/trainer.hpp"
#include "fbrs/zoom.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace fbrs;
using fbrs::testing::rel_err;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
  double extra_seconds = 0;  // work done elsewhere that counts toward this budget
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const Variant kRefined[] = {Variant::kRgb, Variant::kDistmap, Variant::kFbrsA, Variant::kFbrsB, Variant::kFbrsC};

Outcome identity_check() {
  Model m(ModelConfig{});
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> side(32, 72), nclicks(1, 6);
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int h = side(rng), w = side(rng);
    ImageTensor img(fbrs::testing::random_image(rng, h, w));
    const auto dmaps = make_distance_maps(fbrs::testing::random_clicks(rng, h, w, nclicks(rng)), h, w);
    const auto ref = m.forward(img, dmaps);
    for (auto p : {InsertionPoint::A, InsertionPoint::B, InsertionPoint::C}) {
      const auto f = m.features_at(img, dmaps, p);
      if (!(m.head_forward_with_aux(f, AuxParams::identity(f.data.channels)) == ref)) ++mismatches;
    }
  }
  return {mismatches == 0, fmt("100 inputs x 3 insertion points, %d mismatches", mismatches)};
}

Outcome gradient_suite() {
  const Model m = fbrs::testing::toy_model();
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 0.05);
  const auto clicks = fbrs::testing::random_clicks(rng, 16, 16, 6);
  const auto input = fbrs::testing::stacked<double>(m, rng, clicks, 16, 16);
  double worst = 0;
  for (Variant v : kRefined) {
    const auto cfg = BRSConfig::defaults(v);
    EnergyProblem<double> p(m, input, clicks, cfg);
    Eigen::VectorXd delta(static_cast<Eigen::Index>(p.dim()));
    for (auto& x : delta) x = n(rng);
    Eigen::VectorXd g;
    p(delta, g);
    std::uniform_int_distribution<Eigen::Index> pick(0, delta.size() - 1);
    for (int probe = 0; probe < 20; ++probe) {
      const Eigen::Index i = pick(rng);
      const double h = 1e-5;
      auto dp = delta, dm = delta;
      dp[i] += h;
      dm[i] -= h;
      const double fd = (eval_energy(p, dp) - eval_energy(p, dm)) / (2 * h);
      worst = std::max(worst, rel_err(g[i], fd));
    }
  }
  return {worst < 1e-4, fmt("5 variants x 20 probes, worst rel err %.2e", worst)};
}

double rosenbrock(const Eigen::VectorXd& x, Eigen::VectorXd& g) {
  const double a = 1 - x[0], b = x[1] - x[0] * x[0];
  g[0] = -2 * a - 400 * x[0] * b;
  g[1] = 200 * b;
  return a * a + 100 * b * b;
}

Outcome optimizer_suite() {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 3.0);
  double quad_err = 0;
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd c(12);
    for (auto& x : c) x = n(rng);
    Objective f = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
      g = 2 * (x - c);
      return (x - c).squaredNorm();
    };
    LbfgsOptions o;
    o.grad_tolerance = 1e-9;
    quad_err = std::max(quad_err, (lbfgs_minimize(f, Eigen::VectorXd::Zero(12), o).x - c).norm());
  }
  Eigen::VectorXd x0(2);
  x0 << -1.2, 1.0;
  LbfgsOptions o;
  o.max_iters = 200;
  o.grad_tolerance = 1e-10;
  const double rosen = lbfgs_minimize(rosenbrock, x0, o).f;

  const Model m = fbrs::testing::toy_model(9);
  std::mt19937_64 prng(7);
  int non_monotone = 0, iterations = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Variant v = kRefined[trial % 5];
    const auto clicks = fbrs::testing::random_clicks(prng, 32, 32, 1 + trial % 6);
    const auto input = fbrs::testing::stacked<float>(m, prng, clicks, 32, 32);
    auto cfg = BRSConfig::defaults(v);
    cfg.satisfied_stop = SatisfiedStop::kNever;
    const auto r = refine(EnergyProblem<float>(m, input, clicks, cfg), cfg);
    iterations += r.state.iterations;
    for (std::size_t i = 1; i < r.state.energy_trace.size(); ++i)
      if (r.state.energy_trace[i] > r.state.energy_trace[i - 1]) ++non_monotone;
  }
  const bool ok = quad_err < 1e-6 && rosen < 1e-8 && non_monotone == 0;
  return {ok, fmt("quadratic err %.1e, Rosenbrock f %.1e, 50 refinements (%d iterations) with %d energy increases",
                  quad_err, rosen, iterations, non_monotone)};
}

Outcome next_click_fuzz() {
  std::mt19937_64 rng(2024);
  int checked = 0, mismatches = 0;
  while (checked < 500) {
    const int h = std::uniform_int_distribution<int>(1, 32)(rng), w = std::uniform_int_distribution<int>(1, 32)(rng);
    const BinaryMask gt = fbrs::testing::random_blobs(rng, h, w);
    if (!gt.any()) continue;
    const BinaryMask pred = fbrs::testing::random_blobs(rng, h, w);
    ClickSet existing;
    const int steps = std::uniform_int_distribution<int>(0, 3)(rng);
    for (int s = 0; s < steps; ++s) {
      auto c = fbrs::testing::brute_next_click(pred, gt, existing);
      if (!c) break;
      existing.push_back(*c);
    }
    if (next_click(pred, gt, existing) != fbrs::testing::brute_next_click(pred, gt, existing)) ++mismatches;
    ++checked;
  }
  return {mismatches == 0, fmt("500 cases up to 32x32, %d mismatches", mismatches)};
}

BinaryMask box_mask(int h, int w, int y0, int x0, int y1, int x1) {
  BinaryMask m(h, w);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m(y, x) = 1;
  return m;
}

Outcome zoom_geometry() {
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const char* what) {
    if (!ok) failed.push_back(what);
  };
  const ZoomState st;
  const auto r = compute_crop(box_mask(100, 200, 40, 10, 60, 50), 100, 200, st);
  expect(r && r->x0 == 2 && r->x1 == 58 && r->y0 == 36 && r->y1 == 64, "expansion");
  expect(r && r->scale == 400.0 / 56, "scale");
  const auto e = compute_crop(box_mask(50, 60, 0, 45, 20, 60), 50, 60, st);
  expect(e && e->y0 == 0 && e->x1 == 60 && e->y1 == 24 && e->x0 == 42, "edge clamp");

  ZoomState active;
  active.active = true;
  active.rect = CropRect{20, 20, 60, 60, 10.0};
  expect(update_on_click(active, Click{30, 30, ClickLabel::kPositive, 4}, 200, 200) == active, "inside click");
  const auto grown = update_on_click(active, Click{40, 89, ClickLabel::kPositive, 4}, 200, 200);
  expect(grown.rect && grown.rect->contains(40, 89) && grown.rect->x1 > 90 && grown.rect->x0 == 20, "outside click");
  const auto edge = update_on_click(active, Click{199, 30, ClickLabel::kNegative, 4}, 200, 200);
  expect(edge.rect && edge.rect->y1 == 200 && edge.rect->contains(199, 30), "edge click");

  std::mt19937_64 rng(1);
  std::normal_distribution<float> n(0.0f, 3.0f);
  Tensor<float> logits(1, 37, 53);
  for (auto& v : logits.data) v = n(rng);
  const CropRect whole{0, 0, 53, 37, 1.0};
  expect(apply_crop(logits, whole) == logits, "identity crop");
  expect(paste_back(apply_crop(logits, whole), whole, Tensor<float>(1, 37, 53, 9.0f)) == logits, "identity round trip");

  const auto c = compute_crop(box_mask(64, 64, 20, 25, 31, 40), 64, 64, st);
  const Tensor<float> constant(2, 64, 64, 0.625f);
  const auto pasted = paste_back(apply_crop(constant, *c), *c, Tensor<float>(2, 64, 64, -4.0f));
  bool preserved = true;
  for (int ch = 0; ch < 2; ++ch)
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) preserved &= pasted(ch, y, x) == (c->contains(y, x) ? 0.625f : -4.0f);
  expect(preserved, "constant round trip");

  bool remap = true;
  for (int y = c->y0; y < c->y1; ++y)
    for (int x = c->x0; x < c->x1; ++x) {
      const Click k{y, x, ClickLabel::kPositive, 1};
      const auto in = to_crop(k, *c);
      remap &= in && to_full(*in, *c) == k;
    }
  expect(remap, "click remap");

  std::string detail = "9 geometry checks";
  for (const auto& f : failed) detail += ", failed " + f;
  return {failed.empty(), detail};
}

Outcome nfl_property() {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  LossConfig nfl, bce;
  bce.kind = LossKind::kBce;
  double worst_mass = 0, worst_gamma0 = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int batch = 1 + trial % 4, h = 4 + trial % 13, w = 5 + trial % 11;
    std::vector<Tensor<float>> logits;
    std::vector<BinaryMask> gt;
    for (int b = 0; b < batch; ++b) {
      Tensor<float> l(1, h, w);
      BinaryMask g(h, w);
      for (auto& v : l.data) v = static_cast<float>(8 * u(rng) - 4);
      for (auto& v : g.data) v = u(rng) < 0.3;
      logits.push_back(std::move(l));
      gt.push_back(std::move(g));
    }
    nfl.gamma = 0.5 + 3 * u(rng);
    const auto a = batch_loss(logits, gt, nfl), b = batch_loss(logits, gt, bce);
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.grad.size(); ++i)
      for (std::size_t k = 0; k < a.grad[i].data.size(); ++k) {
        ma += std::abs(a.grad[i].data[k]);
        mb += std::abs(b.grad[i].data[k]);
      }
    worst_mass = std::max(worst_mass, std::abs(ma - mb) / mb);

    std::vector<double> prob(static_cast<std::size_t>(h) * w);
    std::vector<std::uint8_t> labels(prob.size());
    for (std::size_t i = 0; i < prob.size(); ++i) {
      prob[i] = u(rng);
      labels[i] = u(rng) < 0.5;
    }
    LossConfig g0 = nfl;
    g0.gamma = 0;
    const double ref = pixel_loss(prob, labels, bce).value;
    worst_gamma0 = std::max(worst_gamma0, std::abs(pixel_loss(prob, labels, g0).value - ref));
  }
  return {worst_mass < 0.01 && worst_gamma0 < 1e-6,
          fmt("200 batches, worst gradient mass gap %.2e, worst gamma=0 gap %.2e", worst_mass, worst_gamma0)};
}

struct Shared {
  std::shared_ptr<const Model> model;
  double train_seconds = 0;
  std::string model_source;
  std::vector<DatasetItem> items;
  BenchmarkRun none, fbrs;
  double fbrs_run_seconds = 0;
  std::vector<BenchmarkReport> reports;  // every benchmark run, for the metric property
  std::vector<SessionTrace> traces;
};

EngineConfig engine(Variant v, int zoom_target) {
  EngineConfig cfg;
  cfg.brs = BRSConfig::defaults(v);
  cfg.zoom_target = zoom_target;
  return cfg;
}

void load_or_train(Shared& s, const std::string& checkpoint) {
  if (!checkpoint.empty()) {
    const auto ckpt = read_checkpoint(checkpoint);
    for (const auto& e : epoch_records_from_json(ckpt.log_json)) s.train_seconds += e.seconds;
    s.model = std::make_shared<const Model>(model_from_checkpoint(ckpt));
    s.model_source = checkpoint;
    return;
  }
  const auto t0 = Clock::now();
  const TrainConfig cfg;
  auto model = std::make_shared<Model>(ModelConfig{});
  const auto train_set = gen_synthetic_dataset(cfg.train_samples, cfg.image_size, cfg.image_size, cfg.seed);
  const auto val_set = gen_synthetic_dataset(cfg.val_samples, cfg.image_size, cfg.image_size, cfg.seed + 1000);
  train(*model, train_set, val_set, cfg);
  s.model = model;
  s.train_seconds = since(t0);
  s.model_source = "trained in process";
}

Outcome efficacy(Shared& s, const std::string& checkpoint, int images, int zoom_target, int threads) {
  load_or_train(s, checkpoint);
  s.items = synthetic_items(images, 88, 88, 20240);
  BenchmarkOptions o;
  o.stop_iou = 2.0;  // every session runs its full 20 clicks
  o.threads = threads;
  s.none = run_benchmark(s.model, s.items, engine(Variant::kNone, zoom_target), o);
  o.oracle = true;
  const auto t0 = Clock::now();
  s.fbrs = run_benchmark(s.model, s.items, engine(Variant::kFbrsB, zoom_target), o);
  s.fbrs_run_seconds = since(t0);
  for (const auto* r : {&s.none, &s.fbrs}) {
    s.reports.push_back(r->report);
    for (const auto& im : r->images) s.traces.push_back(im.trace);
  }
  const auto& a = s.fbrs.report;
  const auto& b = s.none.report;
  const bool ok = a.noc.at("85") < b.noc.at("85") && a.failures_at_cap < b.failures_at_cap;
  return {ok,
          fmt("%d images, NoC@85 %.2f vs %.2f without refinement, failures at 20 %d vs %d; model %s, training %.0fs",
              images, a.noc.at("85"), b.noc.at("85"), a.failures_at_cap, b.failures_at_cap, s.model_source.c_str(),
              s.train_seconds),
          checkpoint.empty() ? 0.0 : s.train_seconds};
}

Outcome speed(Shared& s, int images, int zoom_target) {
  // Both variants replay the click sequences of the f-BRS-B benchmark sessions.
  double fbrs_sum = 0, rgb_sum = 0;
  int clicks = 0;
  const int n = std::min<int>(images, static_cast<int>(s.items.size()));
  std::vector<SessionTrace> fb_traces, rgb_traces;
  for (int i = 0; i < n; ++i) {
    const auto& item = s.items[static_cast<std::size_t>(i)];
    const auto& seq = s.fbrs.images[static_cast<std::size_t>(i)].trace.clicks;
    Session fb(s.model, item.image, engine(Variant::kFbrsB, zoom_target));
    Session rgb(s.model, item.image, engine(Variant::kRgb, zoom_target));
    SessionTrace tf, tr;
    for (const auto& c : seq) {
      const auto a = fb.add_click(c);
      const auto b = rgb.add_click(c);
      fbrs_sum += a.diagnostics.refinement.seconds;
      rgb_sum += b.diagnostics.refinement.seconds;
      tf.ious.push_back(iou(a.mask, item.gt));
      tr.ious.push_back(iou(b.mask, item.gt));
      tf.seconds.push_back(a.diagnostics.seconds);
      tr.seconds.push_back(b.diagnostics.seconds);
      ++clicks;
    }
    tf.clicks = tr.clicks = seq;
    fb_traces.push_back(std::move(tf));
    rgb_traces.push_back(std::move(tr));
  }
  s.reports.push_back(compute_report(fb_traces));
  s.reports.push_back(compute_report(rgb_traces));
  s.traces.insert(s.traces.end(), rgb_traces.begin(), rgb_traces.end());
  const double ratio = rgb_sum > 0 ? fbrs_sum / rgb_sum : INFINITY;
  return {ratio < 0.5,
          fmt("%d sessions, %d clicks, refinement %.2f ms vs %.2f ms per click, ratio %.3f", n, clicks,
              1e3 * fbrs_sum / clicks, 1e3 * rgb_sum / clicks, ratio)};
}

Outcome oracle_limit(const Shared& s) {
  int ok = 0, n = 0;
  for (const auto& im : s.fbrs.images) {
    ++n;
    if (im.oracle && im.oracle->iou >= im.trace.ious.back()) ++ok;
  }
  const double frac = n ? double(ok) / n : 0;
  return {frac >= 0.95, fmt("oracle IoU >= 20-click IoU on %d of %d images (%.1f%%)", ok, n, 100 * frac),
          s.fbrs_run_seconds};
}

Outcome metric_correctness(const Shared& s) {
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const char* what) {
    if (!ok) failed.push_back(what);
  };
  auto trace_of = [](std::vector<double> ious) {
    SessionTrace t;
    t.ious = std::move(ious);
    t.seconds.assign(t.ious.size(), 0.01);
    return t;
  };
  expect(clicks_to_reach({0.5, 0.8, 0.92}, 0.9, 20) == 3, "NoC of one trace");
  const auto never = compute_report({trace_of(std::vector<double>(20, 0.5))});
  expect(never.noc.at("90") == 20 && never.failures_at_cap == 1, "cap contribution");
  expect(compute_report({trace_of({0.5, 0.95}), trace_of({0.1, 0.2, 0.3, 0.99})}).noc.at("90") == 3.0, "mean NoC");
  std::vector<double> slow(60, 0.3);
  slow[59] = 0.93;
  const auto longr = compute_report({trace_of(slow), trace_of(std::vector<double>(100, 0.4)), trace_of({0.92})});
  expect(longr.noc100.at("90") == (60 + 100 + 1) / 3.0, "NoC100");
  expect(longr.failures_at_cap == 2 && longr.failures_at_long_cap == 1, "failure counts");

  int violations = 0;
  for (const auto& r : s.reports)
    if (r.noc.at("85") > r.noc.at("90")) ++violations;
  for (const auto& t : s.traces)
    if (clicks_to_reach(t.ious, 0.85, 20) > clicks_to_reach(t.ious, 0.90, 20)) ++violations;
  expect(violations == 0, "NoC@85 <= NoC@90");
  std::string detail = fmt("5 unit checks, NoC@85 <= NoC@90 over %zu runs and %zu traces", s.reports.size(),
                           s.traces.size());
  for (const auto& f : failed) detail += ", failed " + f;
  return {failed.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string checkpoint;
  int images = 200, speed_images = 60, zoom_target = 64, threads = 0;
  app.add_option("--checkpoint", checkpoint, "trained model; trains with default settings when absent")
      ->envname("FBRS_CHECKPOINT");
  app.add_option("--images", images, "benchmark images");
  app.add_option("--speed-images", speed_images, "sessions replayed for the speed comparison");
  app.add_option("--zoom-target", zoom_target, "long side of the zoomed crop");
  app.add_option("--threads", threads, "benchmark threads; 0 for all cores");
  CLI11_PARSE(app, argc, argv);

  Shared shared;
  struct Criterion {
    const char* name;
    double budget;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"identity", 60, identity_check},
      {"gradients", 120, gradient_suite},
      {"optimizer", 120, optimizer_suite},
      {"efficacy", 1800, [&] { return efficacy(shared, checkpoint, images, zoom_target, threads); }},
      {"speed", 300, [&] { return speed(shared, speed_images, zoom_target); }},
      {"next_click", 60, next_click_fuzz},
      {"zoom", 60, zoom_geometry},
      {"metrics", 60, [&] { return metric_correctness(shared); }},
      {"nfl", 60, nfl_property},
      {"oracle", 600, [&] { return oracle_limit(shared); }},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double seconds = since(t0) + o.extra_seconds;
    const bool pass = o.pass && seconds < c.budget;
    if (!pass) ++failures;
    std::printf("%s %s: %s (%.1fs, budget %.0fs)\n", pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), seconds,
                c.budget);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
