#include "fbrs/model.hpp"

#include <cmath>
#include <random>

namespace fbrs {

std::string to_string(InsertionPoint p) {
  switch (p) {
    case InsertionPoint::A: return "A";
    case InsertionPoint::B: return "B";
    case InsertionPoint::C: return "C";
  }
  return "?";
}

InsertionPoint insertion_point_from_string(const std::string& s) {
  if (s == "A" || s == "a") return InsertionPoint::A;
  if (s == "B" || s == "b") return InsertionPoint::B;
  if (s == "C" || s == "c") return InsertionPoint::C;
  throw ContractError("unknown insertion point: " + s);
}

int ModelConfig::channels_at(InsertionPoint p) const {
  switch (p) {
    case InsertionPoint::A: return stage_widths[2];
    case InsertionPoint::B: return channels_b;
    case InsertionPoint::C: return channels_c;
  }
  return 0;
}

void ModelConfig::validate() const {
  auto positive = [](int v) { return v >= 1; };
  bool ok = positive(dmf_hidden) && positive(aspp_branch_width) && positive(channels_b) &&
            positive(low_level_width) && positive(channels_c) && tail_blocks >= 0;
  for (int w : stage_widths) ok = ok && positive(w);
  for (int d : aspp_dilations) ok = ok && positive(d);
  if (!ok) throw ContractError("model widths must all be >= 1");
}

void validate_aux(const AuxParams& aux, int channels) {
  if (aux.scale.size() != static_cast<std::size_t>(channels) || aux.bias.size() != aux.scale.size())
    throw ContractError("auxiliary parameter length does not match feature channels");
  for (std::size_t i = 0; i < aux.scale.size(); ++i) {
    if (!std::isfinite(aux.scale[i]) || !std::isfinite(aux.bias[i]))
      throw ContractError("auxiliary parameters must be finite");
  }
}

Model::Model(ModelConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto& w = cfg_.stage_widths;
  dmf1_ = nn::make_conv(params_, "dmf.conv1", 5, cfg_.dmf_hidden, 1, 1, 1, 1, true, false);
  dmf2_ = nn::make_conv(params_, "dmf.conv2", cfg_.dmf_hidden, 3, 1, 1, 1, 1, true, false);
  int in = 3;
  for (int s = 0; s < 3; ++s) {
    const std::string base = "encoder.stage" + std::to_string(s + 1);
    enc_[2 * s] = nn::make_conv(params_, base + ".down", in, w[s], 3, 2, 1, 1, true, true);
    enc_[2 * s + 1] = nn::make_conv(params_, base + ".conv", w[s], w[s], 3, 1, 1, 1, true, true);
    in = w[s];
  }
  const int aw = cfg_.aspp_branch_width;
  aspp_1x1_ = nn::make_conv(params_, "aspp.branch1x1", w[2], aw, 1, 1, 1, 1, true, false);
  for (int i = 0; i < 2; ++i) {
    aspp_dil_[i] = nn::make_conv(params_, "aspp.dilated" + std::to_string(i + 1), w[2], aw, 3, 1,
                                 cfg_.aspp_dilations[i], 1, true, false);
  }
  aspp_pool_ = nn::make_conv(params_, "aspp.pool", w[2], aw, 1, 1, 1, 1, true, false);
  aspp_proj_ = nn::make_conv(params_, "aspp.project", 4 * aw, cfg_.channels_b, 1, 1, 1, 1, true, false);
  low_proj_ = nn::make_conv(params_, "decoder.low_proj", w[1], cfg_.low_level_width, 1, 1, 1, 1, true, false);
  const int cat = cfg_.channels_b + cfg_.low_level_width;
  sep1_dw_ = nn::make_conv(params_, "decoder.sep1.dw", cat, cat, 3, 1, 1, cat, false, false);
  sep1_pw_ = nn::make_conv(params_, "decoder.sep1.pw", cat, cfg_.channels_c, 1, 1, 1, 1, true, false);
  for (int i = 0; i < cfg_.tail_blocks; ++i) {
    const std::string base = "decoder.sep" + std::to_string(i + 2);
    tail_dw_.push_back(nn::make_conv(params_, base + ".dw", cfg_.channels_c, cfg_.channels_c, 3, 1, 1,
                                     cfg_.channels_c, false, false));
    tail_pw_.push_back(
        nn::make_conv(params_, base + ".pw", cfg_.channels_c, cfg_.channels_c, 1, 1, 1, 1, true, false));
  }
  cls_ = nn::make_conv(params_, "classifier", cfg_.channels_c, 1, 1, 1, 1, 1, true, false);
  init_weights();
}

void Model::init_weights() {
  std::mt19937_64 rng(cfg_.seed);
  for (auto& p : params_) {
    if (p.shape.size() == 4) {
      const double fan_in = static_cast<double>(p.shape[1]) * p.shape[2] * p.shape[3];
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
      for (auto& v : p.value) v = static_cast<float>(dist(rng));
    }
  }
  params_[cls_.bias].value[0] = -1.0f;
}

template <typename T>
Tensor<T> Model::stack_inputs(const ImageTensor& image, const DistanceMaps& dmaps) const {
  const int h = image.height(), w = image.width();
  if (dmaps.pos.height != h || dmaps.pos.width != w || dmaps.neg.height != h || dmaps.neg.width != w)
    throw ContractError("image and distance maps must share spatial size");
  if (!(dmaps.truncation > 0)) throw ContractError("distance map truncation must be positive");
  Tensor<T> out(5, h, w);
  for (int c = 0; c < 3; ++c) {
    auto src = image.data.plane(c);
    auto dst = out.plane(c);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<T>(src[i]) - T(0.5);
  }
  const T inv = T(1) / static_cast<T>(dmaps.truncation);
  for (std::size_t i = 0; i < out.plane_size(); ++i) {
    out.plane(3)[i] = static_cast<T>(dmaps.pos.data[i]) * inv;
    out.plane(4)[i] = static_cast<T>(dmaps.neg.data[i]) * inv;
  }
  return out;
}

template <typename T>
Model::EncoderIds Model::encode(nn::Graph<T>& g, int input) const {
  if (g.value(input).channels != 5) throw ContractError("network input must have 5 channels");
  int x = g.leaky_relu(g.conv(input, dmf1_), cfg_.leaky_slope);
  x = g.conv(x, dmf2_);
  int low = -1;
  for (int s = 0; s < 3; ++s) {
    x = g.relu(g.conv(x, enc_[2 * s]));
    x = g.relu(g.conv(x, enc_[2 * s + 1]));
    if (s == 1) low = x;
  }
  return EncoderIds{x, g.relu(g.conv(low, low_proj_))};
}

template <typename T>
int Model::aspp(nn::Graph<T>& g, int a) const {
  const int h = g.value(a).height, w = g.value(a).width;
  const int b1 = g.relu(g.conv(a, aspp_1x1_));
  const int b2 = g.relu(g.conv(a, aspp_dil_[0]));
  const int b3 = g.relu(g.conv(a, aspp_dil_[1]));
  const int b4 = g.resize(g.relu(g.conv(g.global_pool(a), aspp_pool_)), h, w);
  return g.relu(g.conv(g.concat(g.concat(b1, b2), g.concat(b3, b4)), aspp_proj_));
}

template <typename T>
int Model::decode_first(nn::Graph<T>& g, int b, int skip) const {
  const auto& sv = g.value(skip);
  const int up = g.resize(b, sv.height, sv.width);
  return g.relu(g.conv(g.conv(g.concat(up, skip), sep1_dw_), sep1_pw_));
}

template <typename T>
int Model::tail(nn::Graph<T>& g, int c, int out_h, int out_w) const {
  int x = c;
  for (std::size_t i = 0; i < tail_dw_.size(); ++i) x = g.relu(g.conv(g.conv(x, tail_dw_[i]), tail_pw_[i]));
  return g.resize(g.conv(x, cls_), out_h, out_w);
}

template <typename T>
int Model::build_from(nn::Graph<T>& g, InsertionPoint from, int feat, int skip, int out_h, int out_w) const {
  int x = feat;
  if (from == InsertionPoint::A) x = aspp(g, x);
  if (from != InsertionPoint::C) x = decode_first(g, x, skip);
  return tail(g, x, out_h, out_w);
}

template <typename T>
Tensor<T> Model::forward_stacked(const Tensor<T>& input) const {
  nn::Graph<T> g(params_);
  const int in = g.leaf(input);
  const auto enc = encode(g, in);
  const int out = build_from(g, InsertionPoint::A, enc.a, enc.skip, input.height, input.width);
  return g.take_value(out);
}

template <typename T>
Features<T> Model::features_from_stacked(const Tensor<T>& input, InsertionPoint point) const {
  nn::Graph<T> g(params_);
  const int in = g.leaf(input);
  const auto enc = encode(g, in);
  int x = enc.a;
  if (point != InsertionPoint::A) x = aspp(g, x);
  if (point == InsertionPoint::C) x = decode_first(g, x, enc.skip);
  Features<T> f;
  f.point = point;
  f.data = g.take_value(x);
  f.skip = g.take_value(enc.skip);
  f.out_height = input.height;
  f.out_width = input.width;
  return f;
}

template <typename T>
Tensor<T> Model::head_forward(const Features<T>& feats, const Aux<T>& aux) const {
  if (feats.data.channels != channels_at(feats.point))
    throw ContractError("feature channel count does not match the insertion point");
  nn::Graph<T> g(params_);
  const int x = g.leaf(feats.data);
  const int skip = g.leaf(feats.skip);
  const int affine = g.channel_affine(x, aux.scale, aux.bias);
  const int out = build_from(g, feats.point, affine, skip, feats.out_height, feats.out_width);
  return g.take_value(out);
}

template <typename T>
InputGradient<T> Model::grad_wrt_input(const Tensor<T>& input, const EnergyFn<T>& energy) const {
  nn::Graph<T> g(params_);
  const int in = g.leaf(input, true);
  const auto enc = encode(g, in);
  const int out = build_from(g, InsertionPoint::A, enc.a, enc.skip, input.height, input.width);
  InputGradient<T> r;
  r.logits = g.value(out);
  Tensor<T> seed(1, input.height, input.width);
  r.energy = energy(r.logits, seed);
  g.backward(out, std::move(seed));
  r.grad = g.grad(in);
  if (r.grad.empty()) r.grad = Tensor<T>(input.channels, input.height, input.width);
  return r;
}

template <typename T>
AuxGradient<T> Model::grad_wrt_aux(const Features<T>& feats, const Aux<T>& aux, const EnergyFn<T>& energy) const {
  if (feats.data.channels != channels_at(feats.point))
    throw ContractError("feature channel count does not match the insertion point");
  nn::Graph<T> g(params_);
  const int x = g.leaf(feats.data);
  const int skip = g.leaf(feats.skip);
  const int affine = g.channel_affine(x, aux.scale, aux.bias);
  const int out = build_from(g, feats.point, affine, skip, feats.out_height, feats.out_width);
  AuxGradient<T> r;
  r.logits = g.value(out);
  Tensor<T> seed(1, feats.out_height, feats.out_width);
  r.energy = energy(r.logits, seed);
  g.backward(out, std::move(seed));
  r.scale_grad = g.affine_scale_grad(affine);
  r.bias_grad = g.affine_bias_grad(affine);
  if (r.scale_grad.empty()) {
    r.scale_grad.assign(aux.channels(), T(0));
    r.bias_grad.assign(aux.channels(), T(0));
  }
  return r;
}

Model::TrainTrace Model::forward_for_training(const Tensor<float>& input) const {
  TrainTrace t{nn::Graph<float>(params_), -1};
  const int in = t.graph.leaf(input);
  const auto enc = encode(t.graph, in);
  t.logits = build_from(t.graph, InsertionPoint::A, enc.a, enc.skip, input.height, input.width);
  return t;
}

double Model::accumulate_param_grads(const Tensor<float>& input, const EnergyFn<float>& loss,
                                     nn::ParamGrads& grads, Tensor<float>* logits_out) const {
  auto t = forward_for_training(input);
  const auto& logits = t.graph.value(t.logits);
  Tensor<float> seed(1, logits.height, logits.width);
  const double value = loss(logits, seed);
  if (logits_out) *logits_out = logits;
  t.graph.backward(t.logits, std::move(seed), &grads);
  return value;
}

Logits Model::forward(const ImageTensor& image, const DistanceMaps& dmaps) const {
  return Logits{forward_stacked(stack_inputs<float>(image, dmaps))};
}

FeatureTensor Model::features_at(const ImageTensor& image, const DistanceMaps& dmaps, InsertionPoint point) const {
  return features_from_stacked(stack_inputs<float>(image, dmaps), point);
}

Logits Model::head_forward_with_aux(const FeatureTensor& feats, const AuxParams& aux) const {
  validate_aux(aux, feats.data.channels);
  return Logits{head_forward(feats, aux)};
}

template <typename T>
std::vector<T> grad_energy(const Model& model, const EnergyFn<T>& energy, const GradTarget& target,
                           const Tensor<T>* input, const Features<T>* feats, const Aux<T>* aux,
                           double* energy_out) {
  if (!energy) throw CapabilityError("no energy function supplied");
  std::vector<T> out;
  if (target.kind == GradTargetKind::kAux) {
    if (!feats || !aux) throw CapabilityError("auxiliary gradient requires cached features and parameters");
    if (feats->point != target.point)
      throw CapabilityError("features were cached at a different insertion point");
    for (std::size_t i = 0; i < aux->channels(); ++i) {
      if (!std::isfinite(static_cast<double>(aux->scale[i])) || !std::isfinite(static_cast<double>(aux->bias[i])))
        throw ContractError("auxiliary parameters must be finite");
    }
    auto r = model.grad_wrt_aux(*feats, *aux, energy);
    out = r.scale_grad;
    out.insert(out.end(), r.bias_grad.begin(), r.bias_grad.end());
    if (energy_out) *energy_out = r.energy;
    return out;
  }
  if (!input) throw CapabilityError("input gradient requires the stacked network input");
  if (!input->all_finite()) throw ContractError("network input must be finite");
  auto r = model.grad_wrt_input(*input, energy);
  const int first = target.kind == GradTargetKind::kImage ? 0 : 3;
  const int count = target.kind == GradTargetKind::kImage ? 3 : 2;
  out.assign(r.grad.data.begin() + static_cast<std::ptrdiff_t>(first * r.grad.plane_size()),
             r.grad.data.begin() + static_cast<std::ptrdiff_t>((first + count) * r.grad.plane_size()));
  if (energy_out) *energy_out = r.energy;
  return out;
}

#define FBRS_INSTANTIATE(T)                                                                                \
  template Tensor<T> Model::stack_inputs<T>(const ImageTensor&, const DistanceMaps&) const;               \
  template Tensor<T> Model::forward_stacked<T>(const Tensor<T>&) const;                                   \
  template Features<T> Model::features_from_stacked<T>(const Tensor<T>&, InsertionPoint) const;           \
  template Tensor<T> Model::head_forward<T>(const Features<T>&, const Aux<T>&) const;                     \
  template InputGradient<T> Model::grad_wrt_input<T>(const Tensor<T>&, const EnergyFn<T>&) const;         \
  template AuxGradient<T> Model::grad_wrt_aux<T>(const Features<T>&, const Aux<T>&, const EnergyFn<T>&)   \
      const;                                                                                               \
  template std::vector<T> grad_energy<T>(const Model&, const EnergyFn<T>&, const GradTarget&,             \
                                         const Tensor<T>*, const Features<T>*, const Aux<T>*, double*);

FBRS_INSTANTIATE(float)
FBRS_INSTANTIATE(double)

#undef FBRS_INSTANTIATE

}  // namespace fbrs
