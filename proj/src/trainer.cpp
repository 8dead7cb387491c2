#include "fbrs/trainer.hpp"

#include "fbrs/clicks.hpp"
#include "fbrs/metrics.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace fbrs {

void TrainConfig::validate() const {
  if (epochs < 1) throw ContractError("epochs must be >= 1");
  if (phase2_epochs < 0 || phase2_epochs > epochs) throw ContractError("phase2_epochs must be in [0, epochs]");
  if (!(lr > 0) || !(lr_phase2 > 0)) throw ContractError("learning rates must be positive");
  if (!(lr_phase2 < lr)) throw ContractError("lr_phase2 must be below lr");
  if (!(backbone_lr_mult > 0)) throw ContractError("backbone_lr_mult must be positive");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ContractError("Adam betas must be in [0,1)");
  if (batch_size < 1) throw ContractError("batch_size must be >= 1");
  if (crop_height < 32 || crop_width < 32) throw ContractError("crop must be at least 32x32");
  if (!(min_scale > 0 && max_scale >= min_scale)) throw ContractError("bad resize range");
  if (image_size < 32) throw ContractError("image_size must be >= 32");
  const double smallest = augment ? image_size * min_scale : image_size;
  if (std::lround(smallest) < std::max(crop_height, crop_width))
    throw ContractError("crop does not fit the smallest resized image");
  if (train_samples < 1 || val_samples < 0) throw ContractError("bad sample counts");
  if (!(gamma >= 0)) throw ContractError("gamma must be >= 0");
}

LossConfig TrainConfig::loss_config() const {
  LossConfig c;
  c.kind = loss;
  c.gamma = gamma;
  c.normalization = normalization;
  c.per_image = per_image;
  return c;
}

double TrainConfig::lr_at(int epoch) const { return epoch >= epochs - phase2_epochs ? lr_phase2 : lr; }

namespace {

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ContractError("expected a boolean, got '" + v + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  T out{};
  if (!(is >> out) || !(is >> std::ws).eof()) throw ContractError("bad value for " + key + ": '" + v + "'");
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void set_train_option(TrainConfig& c, const std::string& key, const std::string& value) {
  if (key == "loss") {
    if (value == "nfl") c.loss = LossKind::kNfl;
    else if (value == "bce") c.loss = LossKind::kBce;
    else throw ContractError("loss must be nfl or bce");
  } else if (key == "normalization") {
    if (value == "gradient_mass") c.normalization = NflNormalization::kGradientMass;
    else if (value == "pixel_count") c.normalization = NflNormalization::kPixelCount;
    else throw ContractError("normalization must be gradient_mass or pixel_count");
  } else if (key == "gamma") c.gamma = parse_number<double>(key, value);
  else if (key == "per_image") c.per_image = parse_bool(value);
  else if (key == "epochs") c.epochs = parse_number<int>(key, value);
  else if (key == "phase2_epochs") c.phase2_epochs = parse_number<int>(key, value);
  else if (key == "lr") c.lr = parse_number<double>(key, value);
  else if (key == "lr_phase2") c.lr_phase2 = parse_number<double>(key, value);
  else if (key == "backbone_lr_mult") c.backbone_lr_mult = parse_number<double>(key, value);
  else if (key == "beta1") c.beta1 = parse_number<double>(key, value);
  else if (key == "beta2") c.beta2 = parse_number<double>(key, value);
  else if (key == "adam_eps") c.adam_eps = parse_number<double>(key, value);
  else if (key == "batch_size") c.batch_size = parse_number<int>(key, value);
  else if (key == "crop_height") c.crop_height = parse_number<int>(key, value);
  else if (key == "crop_width") c.crop_width = parse_number<int>(key, value);
  else if (key == "min_scale") c.min_scale = parse_number<double>(key, value);
  else if (key == "max_scale") c.max_scale = parse_number<double>(key, value);
  else if (key == "augment") c.augment = parse_bool(value);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "train_samples") c.train_samples = parse_number<int>(key, value);
  else if (key == "val_samples") c.val_samples = parse_number<int>(key, value);
  else if (key == "image_size") c.image_size = parse_number<int>(key, value);
  else if (key == "checkpoint") c.checkpoint = value;
  else throw ContractError("unknown training option '" + key + "'");
}

TrainConfig parse_train_config(std::istream& is, TrainConfig base) {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ContractError("line " + std::to_string(lineno) + ": expected key = value");
    set_train_option(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

TrainConfig load_train_config(const std::string& path, TrainConfig base) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read training config " + path);
  return parse_train_config(is, std::move(base));
}

std::string train_config_to_text(const TrainConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "loss = " << (c.loss == LossKind::kNfl ? "nfl" : "bce") << '\n'
     << "gamma = " << c.gamma << '\n'
     << "normalization = " << (c.normalization == NflNormalization::kGradientMass ? "gradient_mass" : "pixel_count")
     << '\n'
     << "per_image = " << (c.per_image ? "true" : "false") << '\n'
     << "epochs = " << c.epochs << '\n'
     << "phase2_epochs = " << c.phase2_epochs << '\n'
     << "lr = " << c.lr << '\n'
     << "lr_phase2 = " << c.lr_phase2 << '\n'
     << "backbone_lr_mult = " << c.backbone_lr_mult << '\n'
     << "beta1 = " << c.beta1 << '\n'
     << "beta2 = " << c.beta2 << '\n'
     << "adam_eps = " << c.adam_eps << '\n'
     << "batch_size = " << c.batch_size << '\n'
     << "crop_height = " << c.crop_height << '\n'
     << "crop_width = " << c.crop_width << '\n'
     << "min_scale = " << c.min_scale << '\n'
     << "max_scale = " << c.max_scale << '\n'
     << "augment = " << (c.augment ? "true" : "false") << '\n'
     << "seed = " << c.seed << '\n'
     << "train_samples = " << c.train_samples << '\n'
     << "val_samples = " << c.val_samples << '\n'
     << "image_size = " << c.image_size << '\n';
  if (!c.checkpoint.empty()) os << "checkpoint = " << c.checkpoint << '\n';
  return os.str();
}

std::string epoch_records_to_json(const std::vector<EpochRecord>& log) {
  auto arr = nlohmann::json::array();
  for (const auto& r : log)
    arr.push_back({{"epoch", r.epoch}, {"loss", r.loss}, {"val_iou", r.val_iou}, {"lr", r.lr},
                   {"seconds", r.seconds}, {"steps", r.steps}});
  return arr.dump();
}

std::vector<EpochRecord> epoch_records_from_json(const std::string& text) {
  std::vector<EpochRecord> out;
  try {
    for (const auto& j : nlohmann::json::parse(text)) {
      EpochRecord r;
      r.epoch = j.at("epoch").get<int>();
      r.loss = j.at("loss").get<double>();
      r.val_iou = j.at("val_iou").get<double>();
      r.lr = j.at("lr").get<double>();
      r.seconds = j.at("seconds").get<double>();
      r.steps = j.at("steps").get<int>();
      out.push_back(r);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("malformed training log: ") + e.what());
  }
  return out;
}

double first_click_iou(const Model& model, const std::vector<SyntheticSample>& samples) {
  if (samples.empty()) return 0.0;
  double sum = 0;
  for (const auto& s : samples) {
    const BinaryMask empty(s.gt.height, s.gt.width);
    const auto click = next_click(empty, s.gt, {});
    if (!click) continue;
    const auto dmaps = make_distance_maps({*click}, s.gt.height, s.gt.width);
    sum += iou(model.forward(s.image, dmaps).mask(), s.gt);
  }
  return sum / static_cast<double>(samples.size());
}

namespace {

struct Example {
  Tensor<float> input;
  BinaryMask gt;
};

std::optional<Example> make_example(const Model& model, const SyntheticSample& s, const TrainConfig& cfg,
                                    SeededRng& rng) {
  SyntheticSample a = cfg.augment ? augment(s, rng, cfg.min_scale, cfg.max_scale) : s;
  if (a.image.height() != cfg.crop_height || a.image.width() != cfg.crop_width)
    a = random_crop(a, cfg.crop_height, cfg.crop_width, rng);
  const auto clicks = sample_training_clicks(a.gt, rng, &a.others);
  if (!clicks) return std::nullopt;
  const auto dmaps = make_distance_maps(*clicks, a.gt.height, a.gt.width);
  return Example{model.stack_inputs<float>(a.image, dmaps), std::move(a.gt)};
}

bool finite_grads(const nn::ParamGrads& g) {
  for (const auto& v : g.values)
    for (double x : v)
      if (!std::isfinite(x)) return false;
  return true;
}

bool finite_params(const nn::ParamStore& params) {
  for (const auto& p : params)
    for (float x : p.value)
      if (!std::isfinite(x)) return false;
  return true;
}

void adam_step(nn::ParamStore& params, const nn::ParamGrads& grads, AdamState& st, const TrainConfig& cfg,
               double lr) {
  ++st.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const double rate = lr * (p.backbone ? cfg.backbone_lr_mult : 1.0);
    auto& m = st.m[i];
    auto& v = st.v[i];
    const auto& g = grads.values[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      m[k] = static_cast<float>(cfg.beta1 * m[k] + (1 - cfg.beta1) * g[k]);
      v[k] = static_cast<float>(cfg.beta2 * v[k] + (1 - cfg.beta2) * g[k] * g[k]);
      const double mh = m[k] / c1, vh = v[k] / c2;
      p.value[k] = static_cast<float>(p.value[k] - rate * mh / (std::sqrt(vh) + cfg.adam_eps));
    }
  }
}

SeededRng epoch_rng(std::uint64_t seed, int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x7261696eu};
  return SeededRng(seq);
}

}  // namespace

TrainResult train(Model& model, const std::vector<SyntheticSample>& train_set,
                  const std::vector<SyntheticSample>& val_set, const TrainConfig& cfg, const Checkpoint* resume,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw ContractError("training set is empty");
  TrainResult result;
  auto& state = result.state;
  if (resume) {
    if (!resume->training) throw ContractError("checkpoint has no optimizer state to resume from");
    model = model_from_checkpoint(*resume);
    state = *resume->training;
    result.log = epoch_records_from_json(resume->log_json);
  } else {
    for (const auto& p : model.params()) {
      state.adam.m.emplace_back(p.value.size(), 0.0f);
      state.adam.v.emplace_back(p.value.size(), 0.0f);
    }
  }
  const auto loss_cfg = cfg.loss_config();
  nn::ParamGrads grads(model.params());

  for (int epoch = state.epochs_done; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const Model last_good = model;
    const TrainingState last_state = state;
    auto rng = epoch_rng(cfg.seed, epoch);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = cfg.lr_at(epoch);
    double loss_sum = 0;
    int steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<Model::TrainTrace> traces;
      std::vector<Tensor<float>> logits;
      std::vector<BinaryMask> gts;
      for (std::size_t k = start; k < end; ++k) {
        auto ex = make_example(model, train_set[order[k]], cfg, rng);
        if (!ex) continue;
        traces.push_back(model.forward_for_training(ex->input));
        logits.push_back(traces.back().graph.value(traces.back().logits));
        gts.push_back(std::move(ex->gt));
      }
      if (traces.empty()) continue;
      auto loss = batch_loss(logits, gts, loss_cfg);
      grads.zero();
      for (std::size_t b = 0; b < traces.size(); ++b)
        traces[b].graph.backward(traces[b].logits, std::move(loss.grad[b]), &grads);
      if (!std::isfinite(loss.value) || !finite_grads(grads)) {
        model = last_good;
        state = last_state;
        result.diverged = true;
        result.message = "non-finite loss or gradient in epoch " + std::to_string(epoch) + "; restored the weights of "
                          "the last completed epoch";
        return result;
      }
      adam_step(model.params(), grads, state.adam, cfg, lr);
      if (!finite_params(model.params())) {
        model = last_good;
        state = last_state;
        result.diverged = true;
        result.message = "non-finite weights after a step in epoch " + std::to_string(epoch) +
                         "; restored the weights of the last completed epoch";
        return result;
      }
      loss_sum += loss.value;
      ++steps;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = steps ? loss_sum / steps : 0.0;
    rec.lr = lr;
    rec.steps = steps;
    rec.val_iou = first_click_iou(model, val_set);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    state.epochs_done = epoch + 1;
    result.log.push_back(rec);
    if (!cfg.checkpoint.empty()) save_checkpoint(cfg.checkpoint, model, &state, epoch_records_to_json(result.log));
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

}  // namespace fbrs
