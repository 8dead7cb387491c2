#include "fbrs/benchmark.hpp"
#include "fbrs/checkpoint.hpp"
#include "fbrs/image_io.hpp"
#include "fbrs/service.hpp"
#include "fbrs/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace fbrs;

namespace {

struct EngineFlags {
  std::string variant = "fbrs_b";
  double lambda = -1;
  int click_limit = -1;
  int max_iters = 20;
  std::string satisfied_stop = "start";
  bool no_zoom = false;
  int zoom_target = 400;
  double zoom_expand = 0.4;
  int zoom_start = 3;

  void add(CLI::App* app) {
    app->add_option("--variant", variant, "none, rgb, distmap, fbrs_a, fbrs_b or fbrs_c")->capture_default_str();
    app->add_option("--lambda", lambda, "inertial weight; default per variant (fbrs 1e-4, rgb/distmap 1e-3)");
    app->add_option("--click-limit", click_limit, "clicks encoded as distance maps, 0 for all; default per variant (fbrs 8, rgb/distmap 4)");
    app->add_option("--max-iters", max_iters, "L-BFGS iterations per click")->capture_default_str();
    app->add_option("--satisfied-stop", satisfied_stop,
                    "skip or end refinement once all clicks have their label: never, start or any")
        ->capture_default_str();
    app->add_flag("--no-zoom", no_zoom, "disable Zoom-In");
    app->add_option("--zoom-target", zoom_target, "long side of the Zoom-In crop, px")->capture_default_str();
    app->add_option("--zoom-expand", zoom_expand, "Zoom-In box expansion ratio")->capture_default_str();
    app->add_option("--zoom-start", zoom_start, "click index at which Zoom-In starts")->capture_default_str();
  }

  EngineConfig config(const std::string& checkpoint) const {
    EngineConfig cfg;
    cfg.checkpoint = checkpoint;
    cfg.brs = BRSConfig::defaults(variant_from_string(variant));
    if (lambda >= 0) cfg.brs.lambda = lambda;
    if (click_limit >= 0) cfg.brs.click_limit = click_limit;
    cfg.brs.max_lbfgs_iters = max_iters;
    cfg.brs.satisfied_stop = satisfied_stop_from_string(satisfied_stop);
    cfg.zoom = !no_zoom;
    cfg.zoom_target = zoom_target;
    cfg.zoom_expand = zoom_expand;
    cfg.zoom_start_click = zoom_start;
    cfg.validate();
    return cfg;
  }
};

std::shared_ptr<const Model> open_model(const std::string& path) {
  if (path.empty()) throw ContractError("no checkpoint: pass --checkpoint or set FBRS_CHECKPOINT");
  return std::make_shared<const Model>(load_model(path));
}

std::vector<SyntheticSample> as_samples(std::vector<DatasetItem> items) {
  std::vector<SyntheticSample> out;
  for (auto& it : items) {
    SyntheticSample s;
    s.image = std::move(it.image);
    s.gt = std::move(it.gt);
    s.others = BinaryMask(s.gt.height, s.gt.width);
    out.push_back(std::move(s));
  }
  return out;
}

Service* g_service = nullptr;
void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"f-BRS interactive segmentation engine"};
  app.require_subcommand(1);
  std::string checkpoint;
  app.add_option("--checkpoint", checkpoint, "model checkpoint path")->envname("FBRS_CHECKPOINT");

  // train
  auto* train_cmd = app.add_subcommand("train", "train the model on synthetic shapes or a dataset directory");
  std::string train_config, model_config, train_out, data_dir, val_dir;
  std::vector<std::string> overrides;
  bool resume = false;
  train_cmd->add_option("--config", train_config, "key = value training config file");
  train_cmd->add_option("--set", overrides, "override one training key, key=value (repeatable)");
  train_cmd->add_option("--model-config", model_config, "JSON model config; default is the desk-scale model");
  train_cmd->add_option("--out", train_out, "checkpoint to write after every epoch; default --checkpoint, else fbrs.ckpt");
  train_cmd->add_flag("--resume", resume, "continue from the output checkpoint's optimizer state");
  train_cmd->add_option("--data", data_dir, "dataset directory with index.txt; default synthetic");
  train_cmd->add_option("--val-data", val_dir, "validation dataset directory; default synthetic with seed+1000");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "run the click protocol and emit a benchmark report");
  EngineFlags eval_flags;
  eval_flags.add(eval_cmd);
  std::string eval_data, report_path, curve_path;
  int eval_images = 200, eval_size = 88, threads = 0;
  std::uint64_t eval_seed = 20240;
  BenchmarkOptions bopts;
  ReportConfig rcfg;
  eval_cmd->add_option("--data", eval_data, "dataset directory with index.txt; default synthetic");
  eval_cmd->add_option("--images", eval_images, "synthetic images")->capture_default_str();
  eval_cmd->add_option("--size", eval_size, "synthetic image side, px")->capture_default_str();
  eval_cmd->add_option("--seed", eval_seed, "synthetic seed (held out from training seeds)")->capture_default_str();
  eval_cmd->add_option("--cap", bopts.cap, "clicks per image")->capture_default_str();
  eval_cmd->add_option("--stop-iou", bopts.stop_iou, "end a session at this IoU; above 1 runs every click")
      ->capture_default_str();
  eval_cmd->add_option("--targets", rcfg.targets, "NoC thresholds")->capture_default_str()->delimiter(',');
  eval_cmd->add_option("--failure-target", rcfg.failure_target, "IoU for the failure counts")->capture_default_str();
  eval_cmd->add_option("--long-cap", rcfg.long_cap, "cap for NoC100 and the second failure count")
      ->capture_default_str();
  eval_cmd->add_option("--threads", threads, "parallel sessions, 0 for all cores")->capture_default_str();
  eval_cmd->add_flag("--oracle", bopts.oracle, "also run the f-BRS oracle after each session");
  eval_cmd->add_option("--report", report_path, "write the JSON report here");
  eval_cmd->add_option("--curve", curve_path, "write the mean-IoU curve CSV here");

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "HTTP service for interactive sessions");
  EngineFlags serve_flags;
  serve_flags.add(serve_cmd);
  std::string host = "127.0.0.1", ui_dir;
  int port = 8080;
  std::size_t max_sessions = 64;
  serve_cmd->add_option("--host", host, "bind address")->capture_default_str();
  serve_cmd->add_option("--port", port, "port, 0 for any free port")->capture_default_str();
  serve_cmd->add_option("--ui", ui_dir, "static UI directory served under /ui");
  serve_cmd->add_option("--max-sessions", max_sessions, "open session limit")->capture_default_str();

  // replay
  auto* replay_cmd = app.add_subcommand("replay", "replay a click log on an image");
  EngineFlags replay_flags;
  replay_flags.add(replay_cmd);
  std::string click_log, replay_image, replay_gt, mask_out, prob_out;
  replay_cmd->add_option("click-log", click_log, "lines of \"index u v pos|neg\"")->required();
  replay_cmd->add_option("--image", replay_image, "PNG image")->required();
  replay_cmd->add_option("--gt", replay_gt, "PNG ground-truth mask; adds IoU per click");
  replay_cmd->add_option("--mask-out", mask_out, "write the final mask PNG");
  replay_cmd->add_option("--prob-out", prob_out, "write the final probability PNG");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic dataset directory");
  std::string synth_out;
  int synth_images = 200, synth_size = 88;
  std::uint64_t synth_seed = 20240;
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--images", synth_images, "images")->capture_default_str();
  synth_cmd->add_option("--size", synth_size, "image side, px")->capture_default_str();
  synth_cmd->add_option("--seed", synth_seed, "seed")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      TrainConfig cfg;
      if (!train_config.empty()) cfg = load_train_config(train_config, cfg);
      for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ContractError("--set expects key=value, got " + kv);
        set_train_option(cfg, kv.substr(0, eq), kv.substr(eq + 1));
      }
      cfg.checkpoint = !train_out.empty() ? train_out : !checkpoint.empty() ? checkpoint : "fbrs.ckpt";
      cfg.validate();
      auto train_set = data_dir.empty()
                           ? gen_synthetic_dataset(cfg.train_samples, cfg.image_size, cfg.image_size, cfg.seed)
                           : as_samples(load_dataset(data_dir));
      auto val_set = !val_dir.empty() ? as_samples(load_dataset(val_dir))
                     : cfg.val_samples > 0
                         ? gen_synthetic_dataset(cfg.val_samples, cfg.image_size, cfg.image_size, cfg.seed + 1000)
                         : std::vector<SyntheticSample>{};
      std::optional<Checkpoint> from;
      ModelConfig mc;
      if (!model_config.empty()) {
        std::ifstream is(model_config);
        if (!is) throw std::runtime_error("cannot read " + model_config);
        std::stringstream ss;
        ss << is.rdbuf();
        mc = model_config_from_json(ss.str());
      } else {
        mc.seed = cfg.seed;
      }
      if (resume) {
        from = read_checkpoint(cfg.checkpoint);
        mc = from->config;
      }
      Model model(mc);
      std::istringstream cfg_text(train_config_to_text(cfg));
      for (std::string line; std::getline(cfg_text, line);) std::cout << "# " << line << "\n";
      auto result = train(model, train_set, val_set, cfg, from ? &*from : nullptr, [](const EpochRecord& e) {
        std::printf("epoch %d loss %.6f val_iou %.4f lr %g seconds %.2f\n", e.epoch, e.loss, e.val_iou, e.lr, e.seconds);
        std::fflush(stdout);
      });
      if (result.diverged) {
        std::cerr << "training diverged: " << result.message << "\n";
        return 2;
      }
      save_checkpoint(cfg.checkpoint, model, &result.state, epoch_records_to_json(result.log));
      std::cout << "checkpoint " << cfg.checkpoint << "\n";
      return 0;
    }

    if (*eval_cmd) {
      const auto model = open_model(checkpoint);
      const auto cfg = eval_flags.config(checkpoint);
      bopts.threads = threads;
      const auto items = eval_data.empty() ? synthetic_items(eval_images, eval_size, eval_size, eval_seed)
                                           : load_dataset(eval_data);
      rcfg.cap = bopts.cap;
      const auto run = run_benchmark(model, items, cfg, bopts, rcfg);
      std::cout << report_to_json(run.report) << "\n";
      if (bopts.oracle) {
        int ok = 0, n = 0;
        for (const auto& r : run.images)
          if (r.oracle) {
            ++n;
            ok += r.oracle->iou >= r.trace.ious.back();
          }
        std::cout << nlohmann::json{{"oracle_images", n}, {"oracle_at_least_final", ok}}.dump() << "\n";
      }
      if (!report_path.empty())
        emit_report(run.report, report_path,
                    curve_path.empty() ? std::nullopt : std::optional<std::string>(curve_path));
      return 0;
    }

    if (*serve_cmd) {
      ServiceConfig scfg;
      scfg.engine = serve_flags.config(checkpoint);
      scfg.ui_dir = ui_dir;
      scfg.max_sessions = max_sessions;
      Service service(open_model(checkpoint), scfg);
      const int bound = service.bind(host, port);
      if (bound <= 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "listening on http://" << host << ":" << bound << std::endl;
      service.run();
      g_service = nullptr;
      return 0;
    }

    if (*replay_cmd) {
      std::ifstream is(click_log);
      if (!is) throw std::runtime_error("cannot read " + click_log);
      const ClickSet clicks = read_click_log(is);
      Session session(open_model(checkpoint), load_image(replay_image), replay_flags.config(checkpoint));
      std::optional<BinaryMask> gt;
      if (!replay_gt.empty()) gt = load_mask(replay_gt);
      for (const auto& c : clicks) {
        const auto update = session.add_click(c);
        nlohmann::json line = nlohmann::json::parse(diagnostics_to_json(update.diagnostics, session.config().brs));
        line.erase("energy_trace");
        if (gt) line["iou"] = iou(update.mask, *gt);
        std::cout << line.dump() << "\n";
      }
      if (!mask_out.empty()) write_file(mask_out, encode_png_mask(session.mask()));
      if (!prob_out.empty()) write_file(prob_out, encode_png_prob(session.prob_map()));
      return 0;
    }

    if (*synth_cmd) {
      write_dataset(synth_out, synthetic_items(synth_images, synth_size, synth_size, synth_seed));
      std::cout << "wrote " << synth_images << " items to " << synth_out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
