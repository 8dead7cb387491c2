#include "fbrs/engine.hpp"

#include "fbrs/metrics.hpp"

#include "json.hpp"

#include <bit>
#include <chrono>
#include <cstring>
#include <istream>
#include <ostream>

namespace fbrs {

void EngineConfig::validate() const {
  brs.validate();
  if (zoom_target < 8) throw ContractError("zoom_target must be >= 8");
  if (!(zoom_expand >= 0)) throw ContractError("zoom_expand must be >= 0");
  if (zoom_start_click < 1) throw ContractError("zoom_start_click must be >= 1");
  if (!(truncation > 0)) throw ContractError("truncation must be positive");
}

ZoomState EngineConfig::initial_zoom() const {
  ZoomState z;
  z.target_long_side = zoom_target;
  z.expand_ratio = zoom_expand;
  z.start_click = zoom_start_click;
  return z;
}

std::string diagnostics_to_json(const ClickDiagnostics& d, const BRSConfig& cfg) {
  nlohmann::json j;
  j["variant"] = d.variant;
  j["lambda"] = cfg.lambda;
  j["click_limit"] = cfg.click_limit;
  j["click_count"] = d.click_count;
  j["net_clicks"] = d.net_clicks;
  j["energy_clicks"] = d.energy_clicks;
  j["zoom_active"] = d.zoom_active;
  if (d.rect) {
    j["rect"] = {{"x0", d.rect->x0}, {"y0", d.rect->y0}, {"x1", d.rect->x1}, {"y1", d.rect->y1},
                 {"scale", d.rect->scale}};
  } else {
    j["rect"] = nullptr;
  }
  j["cache_hit"] = d.cache_hit;
  j["refinement"] = nlohmann::json::parse(diagnostics_line(cfg, d.refinement));
  j["energy_trace"] = d.refinement.energy_trace;
  j["seconds"] = d.seconds;
  j["mask_pixels"] = d.mask_pixels;
  return j.dump();
}

Session::Session(std::shared_ptr<const Model> model, ImageTensor image, EngineConfig cfg, std::string id)
    : model_(std::move(model)), image_(std::move(image)), cfg_(std::move(cfg)), id_(std::move(id)) {
  if (!model_) throw ContractError("session needs a model");
  validate_image(image_.data);
  cfg_.validate();
  reset();
}

Tensor<float> Session::prob_map() const {
  if (state_.logits.empty()) return Tensor<float>(1, image_.height(), image_.width());
  return Logits{state_.logits}.prob();
}

Session::Prepared Session::prepare(const SessionState& s) const {
  Prepared p;
  p.net_clicks = cfg_.brs.click_limit > 0 ? limit_clicks(s.clicks, cfg_.brs.click_limit) : s.clicks;
  const auto dmaps = make_distance_maps(p.net_clicks, image_.height(), image_.width(), cfg_.truncation);
  Tensor<float> full = model_->stack_inputs<float>(image_, dmaps);
  if (s.zoom.active && s.zoom.rect) {
    p.input = apply_crop(full, *s.zoom.rect);
    for (const auto& c : s.clicks)
      if (auto cc = to_crop(c, *s.zoom.rect)) p.energy_clicks.push_back(*cc);
  } else {
    p.input = std::move(full);
    p.energy_clicks = s.clicks;
  }
  return p;
}

MaskUpdate Session::update_from_state() const {
  return MaskUpdate{state_.mask, static_cast<int>(state_.clicks.size()), state_.diagnostics};
}

MaskUpdate Session::add_click(int u, int v, ClickLabel label) {
  const auto t0 = std::chrono::steady_clock::now();
  const int h = image_.height(), w = image_.width();
  if (u < 0 || u >= h || v < 0 || v >= w)
    throw ContractError("click (" + std::to_string(u) + ", " + std::to_string(v) + ") is outside the image");
  if (contains_pixel(state_.clicks, u, v))
    throw ContractError("a click already exists at (" + std::to_string(u) + ", " + std::to_string(v) + ")");

  SessionState next = state_;
  const Click click{u, v, label, static_cast<int>(state_.clicks.size()) + 1};
  next.clicks.push_back(click);
  if (cfg_.zoom && static_cast<int>(next.clicks.size()) >= next.zoom.start_click) {
    // Recomputed from the latest prediction on every click, then grown to cover the click.
    auto rect = compute_crop(state_.mask, h, w, next.zoom);
    next.zoom.active = rect && crop_usable(*rect, next.zoom);
    next.zoom.rect = next.zoom.active ? rect : std::nullopt;
    next.zoom = update_on_click(next.zoom, click, h, w);
  }

  auto prep = prepare(next);
  const bool fbrs = is_fbrs(cfg_.brs.variant);
  const Features<float>* cached = nullptr;
  if (fbrs && next.cache && next.cache->net_clicks == prep.net_clicks && next.cache->rect == next.zoom.rect &&
      next.cache->features.point == insertion_point(cfg_.brs.variant))
    cached = &next.cache->features;
  const bool hit = cached != nullptr;
  const int energy_clicks = static_cast<int>(prep.energy_clicks.size());
  EnergyProblem<float> problem(*model_, std::move(prep.input), std::move(prep.energy_clicks), cfg_.brs, cached);
  if (fbrs && !hit) next.cache = FeatureCache{prep.net_clicks, next.zoom.rect, *problem.features()};
  if (!fbrs) next.cache.reset();

  // A warm start only makes sense on the same working window.
  const bool same_window = state_.zoom.rect == next.zoom.rect;
  const std::vector<double>* warm = cfg_.brs.warm_start && same_window ? &state_.last_delta : nullptr;
  auto res = refine(problem, cfg_.brs, warm);
  next.last_delta = res.state.delta;

  if (next.zoom.active && next.zoom.rect) {
    // Zoom starts after at least one earlier prediction; the fallback only guards odd configs.
    const Tensor<float> previous = state_.logits.empty() ? Tensor<float>(1, h, w, -20.0f) : state_.logits;
    next.logits = paste_back(res.logits.data, *next.zoom.rect, previous);
  } else {
    next.logits = std::move(res.logits.data);
  }
  next.mask = Logits{next.logits}.mask();

  auto& d = next.diagnostics;
  d = ClickDiagnostics{};
  d.variant = to_string(cfg_.brs.variant);
  d.click_count = static_cast<int>(next.clicks.size());
  d.net_clicks = static_cast<int>(prep.net_clicks.size());
  d.energy_clicks = energy_clicks;
  d.zoom_active = next.zoom.active;
  d.rect = next.zoom.rect;
  d.cache_hit = hit;
  d.refinement = std::move(res.state);
  d.mask_pixels = next.mask.count();
  d.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  history_.push_back(std::move(state_));
  state_ = std::move(next);
  return update_from_state();
}

std::optional<MaskUpdate> Session::undo() {
  if (history_.empty()) return std::nullopt;
  state_ = std::move(history_.back());
  history_.pop_back();
  return update_from_state();
}

MaskUpdate Session::reset() {
  history_.clear();
  state_ = SessionState{};
  state_.zoom = cfg_.initial_zoom();
  state_.mask = BinaryMask(image_.height(), image_.width());
  state_.diagnostics.variant = to_string(cfg_.brs.variant);
  return update_from_state();
}

MaskUpdate Session::set_config(const EngineConfig& cfg) {
  cfg.validate();
  const ClickSet clicks = state_.clicks;
  cfg_ = cfg;
  reset();
  for (const auto& c : clicks) add_click(c.u, c.v, c.label);
  return update_from_state();
}

MaskUpdate Session::set_brs(const BRSConfig& brs) {
  EngineConfig cfg = cfg_;
  cfg.brs = brs;
  return set_config(cfg);
}

Session::OracleResult Session::oracle(const BinaryMask& gt, int max_iters) const {
  if (!is_fbrs(cfg_.brs.variant)) throw CapabilityError("the oracle bound is defined for f-BRS variants only");
  if (state_.clicks.empty()) throw ContractError("the oracle bound needs at least one click");
  if (gt.height != image_.height() || gt.width != image_.width())
    throw ContractError("ground truth does not match the image size");
  if (max_iters < 1) throw ContractError("max_iters must be >= 1");

  auto prep = prepare(state_);
  const Features<float>* cached =
      state_.cache && state_.cache->rect == state_.zoom.rect && state_.cache->net_clicks == prep.net_clicks
          ? &state_.cache->features
          : nullptr;
  EnergyProblem<float> problem(*model_, std::move(prep.input), std::move(prep.energy_clicks), cfg_.brs, cached);
  Tensor<float> target(1, gt.height, gt.width);
  for (std::size_t i = 0; i < gt.data.size(); ++i) target.data[i] = gt.data[i] ? 1.0f : 0.0f;
  const bool zoomed = state_.zoom.active && state_.zoom.rect;
  if (zoomed) target = apply_crop(target, *state_.zoom.rect);
  problem.set_dense_target(std::move(target));

  BRSConfig oc = cfg_.brs;
  oc.max_lbfgs_iters = max_iters;
  oc.grad_tolerance = 1e-8;
  Objective fn = [&problem](const Eigen::VectorXd& x, Eigen::VectorXd& g) { return problem(x, g); };
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(problem.dim()));
  if (state_.last_delta.size() == problem.dim())
    x0 = Eigen::Map<const Eigen::VectorXd>(state_.last_delta.data(), static_cast<Eigen::Index>(problem.dim()));
  const auto r = lbfgs_minimize(fn, x0, oc.lbfgs());
  auto full_iou = [&](const Eigen::VectorXd& x) {
    Tensor<float> logits = problem.logits(x);
    if (zoomed) logits = paste_back(logits, *state_.zoom.rect, state_.logits);
    return iou(Logits{logits}.mask(), gt);
  };
  OracleResult out;
  out.iou = full_iou(r.x);
  out.start_iou = full_iou(x0);
  out.start_energy = r.energy_trace.front();
  out.end_energy = r.f;
  return out;
}

namespace {

constexpr char kSessionMagic[8] = {'F', 'B', 'R', 'S', 'S', 'E', 'S', 'S'};

nlohmann::json config_json(const EngineConfig& c) {
  return {{"checkpoint", c.checkpoint},
          {"variant", to_string(c.brs.variant)},
          {"lambda", c.brs.lambda},
          {"max_lbfgs_iters", c.brs.max_lbfgs_iters},
          {"grad_tolerance", c.brs.grad_tolerance},
          {"history_size", c.brs.history_size},
          {"warm_start", c.brs.warm_start},
          {"click_limit", c.brs.click_limit},
          {"satisfied_stop", to_string(c.brs.satisfied_stop)},
          {"zoom", c.zoom},
          {"zoom_target", c.zoom_target},
          {"zoom_expand", c.zoom_expand},
          {"zoom_start_click", c.zoom_start_click},
          {"truncation", c.truncation}};
}

EngineConfig config_from_json(const nlohmann::json& j) {
  EngineConfig c;
  c.checkpoint = j.at("checkpoint").get<std::string>();
  c.brs.variant = variant_from_string(j.at("variant").get<std::string>());
  c.brs.lambda = j.at("lambda").get<double>();
  c.brs.max_lbfgs_iters = j.at("max_lbfgs_iters").get<int>();
  c.brs.grad_tolerance = j.at("grad_tolerance").get<double>();
  c.brs.history_size = j.at("history_size").get<int>();
  c.brs.warm_start = j.at("warm_start").get<bool>();
  c.brs.click_limit = j.at("click_limit").get<int>();
  c.brs.satisfied_stop = satisfied_stop_from_string(j.at("satisfied_stop").get<std::string>());
  c.zoom = j.at("zoom").get<bool>();
  c.zoom_target = j.at("zoom_target").get<int>();
  c.zoom_expand = j.at("zoom_expand").get<double>();
  c.zoom_start_click = j.at("zoom_start_click").get<int>();
  c.truncation = j.at("truncation").get<float>();
  return c;
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw ContractError("session snapshot truncated");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void Session::save(std::ostream& os) const {
  nlohmann::json j;
  j["id"] = id_;
  j["config"] = config_json(cfg_);
  j["height"] = image_.height();
  j["width"] = image_.width();
  auto clicks = nlohmann::json::array();
  for (const auto& c : state_.clicks) clicks.push_back({c.u, c.v, c.positive() ? 1 : 0});
  j["clicks"] = clicks;
  const std::string text = j.dump();
  os.write(kSessionMagic, sizeof kSessionMagic);
  put_u32(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (float f : image_.data.data) put_u32(os, std::bit_cast<std::uint32_t>(f));
  if (!os) throw std::runtime_error("session snapshot write failed");
}

Session Session::load(std::istream& is, std::shared_ptr<const Model> model) {
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kSessionMagic, sizeof magic) != 0)
    throw ContractError("not a session snapshot");
  std::string text(get_u32(is), '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(text.size()))) throw ContractError("session snapshot truncated");
  nlohmann::json j;
  EngineConfig cfg;
  int h = 0, w = 0;
  try {
    j = nlohmann::json::parse(text);
    cfg = config_from_json(j.at("config"));
    h = j.at("height").get<int>();
    w = j.at("width").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("malformed session snapshot: ") + e.what());
  }
  Tensor<float> img(3, h, w);
  for (auto& f : img.data) f = std::bit_cast<float>(get_u32(is));
  Session s(std::move(model), ImageTensor(std::move(img)), cfg, j.value("id", std::string{}));
  for (const auto& c : j.at("clicks"))
    s.add_click(c.at(0).get<int>(), c.at(1).get<int>(),
                c.at(2).get<int>() ? ClickLabel::kPositive : ClickLabel::kNegative);
  return s;
}

}  // namespace fbrs
