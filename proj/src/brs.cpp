#include "fbrs/brs.hpp"

#include "json.hpp"

#include <chrono>
#include <cmath>

namespace fbrs {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kNone: return "none";
    case Variant::kRgb: return "rgb";
    case Variant::kDistmap: return "distmap";
    case Variant::kFbrsA: return "fbrs_a";
    case Variant::kFbrsB: return "fbrs_b";
    case Variant::kFbrsC: return "fbrs_c";
  }
  return "unknown";
}

Variant variant_from_string(const std::string& s) {
  for (Variant v : {Variant::kNone, Variant::kRgb, Variant::kDistmap, Variant::kFbrsA, Variant::kFbrsB,
                    Variant::kFbrsC}) {
    if (s == to_string(v)) return v;
  }
  throw ContractError("unknown variant '" + s + "'");
}

bool is_fbrs(Variant v) { return v == Variant::kFbrsA || v == Variant::kFbrsB || v == Variant::kFbrsC; }

InsertionPoint insertion_point(Variant v) {
  switch (v) {
    case Variant::kFbrsA: return InsertionPoint::A;
    case Variant::kFbrsB: return InsertionPoint::B;
    case Variant::kFbrsC: return InsertionPoint::C;
    default: throw CapabilityError("variant " + to_string(v) + " has no insertion point");
  }
}

std::string to_string(SatisfiedStop s) {
  switch (s) {
    case SatisfiedStop::kNever: return "never";
    case SatisfiedStop::kAtStart: return "start";
    case SatisfiedStop::kAnyIterate: return "any";
  }
  return "?";
}

SatisfiedStop satisfied_stop_from_string(const std::string& s) {
  if (s == "never") return SatisfiedStop::kNever;
  if (s == "start") return SatisfiedStop::kAtStart;
  if (s == "any") return SatisfiedStop::kAnyIterate;
  throw ContractError("satisfied stop must be never, start or any, got \"" + s + "\"");
}

BRSConfig BRSConfig::defaults(Variant v) {
  BRSConfig c;
  c.variant = v;
  if (is_fbrs(v)) {
    c.lambda = 1e-4;
    c.warm_start = false;
    c.click_limit = 8;
  } else if (v == Variant::kNone) {
    c.lambda = 0;
    c.warm_start = false;
    c.click_limit = 0;
  } else {
    c.lambda = 1e-3;
    c.warm_start = true;
    c.click_limit = 4;
  }
  return c;
}

void BRSConfig::validate() const {
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw ContractError("lambda must be finite and >= 0");
  if (max_lbfgs_iters < 1) throw ContractError("max_lbfgs_iters must be >= 1");
  if (!(grad_tolerance >= 0)) throw ContractError("grad_tolerance must be >= 0");
  if (history_size < 1) throw ContractError("history_size must be >= 1");
  if (click_limit < 0) throw ContractError("click_limit must be >= 0");
}

LbfgsOptions BRSConfig::lbfgs() const {
  LbfgsOptions o;
  o.max_iters = max_lbfgs_iters;
  o.grad_tolerance = grad_tolerance;
  o.history = history_size;
  return o;
}

template <typename T>
EnergyProblem<T>::EnergyProblem(const Model& model, Tensor<T> input, ClickSet clicks, const BRSConfig& cfg,
                                const Features<T>* cached)
    : model_(&model), input_(std::move(input)), clicks_(std::move(clicks)), cfg_(cfg) {
  cfg_.validate();
  if (input_.channels != 5) throw ContractError("refinement input must be the stacked 5-channel tensor");
  for (const auto& c : clicks_) {
    if (c.u < 0 || c.u >= input_.height || c.v < 0 || c.v >= input_.width)
      throw ContractError("energy click outside the refinement input");
  }
  if (is_fbrs(cfg_.variant)) {
    const auto point = insertion_point(cfg_.variant);
    if (cached) {
      if (cached->point != point) throw CapabilityError("cached features belong to another insertion point");
      feats_ = *cached;
    } else {
      feats_ = model.features_from_stacked(input_, point);
    }
  }
}

template <typename T>
std::size_t EnergyProblem<T>::dim() const {
  switch (cfg_.variant) {
    case Variant::kNone: return 0;
    case Variant::kRgb: return 3 * input_.plane_size();
    case Variant::kDistmap: return 2 * input_.plane_size();
    default: return 2 * static_cast<std::size_t>(feats_->data.channels);
  }
}

template <typename T>
void EnergyProblem<T>::set_dense_target(Tensor<T> target) {
  if (target.channels != 1 || target.height != input_.height || target.width != input_.width)
    throw ContractError("dense target must be 1 x H x W");
  dense_ = std::move(target);
}

template <typename T>
double EnergyProblem<T>::corrective(const Tensor<T>& logits, Tensor<T>* grad) const {
  double e = 0;
  auto term = [&](std::size_t i, double label) {
    const double p = sigmoid(static_cast<double>(logits.data[i]));
    const double r = p - label;
    e += r * r;
    if (grad) grad->data[i] += static_cast<T>(2.0 * r * p * (1.0 - p));
  };
  if (dense_) {
    for (std::size_t i = 0; i < logits.size(); ++i) term(i, static_cast<double>(dense_->data[i]));
  } else {
    for (const auto& c : clicks_)
      term(static_cast<std::size_t>(c.u) * logits.width + c.v, c.positive() ? 1.0 : 0.0);
  }
  return e;
}

template <typename T>
Tensor<T> EnergyProblem<T>::perturbed_input(const Eigen::VectorXd& delta) const {
  Tensor<T> x = input_;
  const std::size_t first = cfg_.variant == Variant::kRgb ? 0 : 3 * input_.plane_size();
  for (Eigen::Index i = 0; i < delta.size(); ++i) x.data[first + i] += static_cast<T>(delta[i]);
  return x;
}

template <typename T>
Aux<T> EnergyProblem<T>::aux_from(const Eigen::VectorXd& delta) const {
  const int c = feats_->data.channels;
  Aux<T> aux = Aux<T>::identity(c);
  for (int i = 0; i < c; ++i) {
    aux.scale[i] = static_cast<T>(1.0 + delta[i]);
    aux.bias[i] = static_cast<T>(delta[c + i]);
  }
  return aux;
}

template <typename T>
bool EnergyProblem<T>::clicks_satisfied(const Tensor<T>& logits) const {
  for (const auto& c : clicks_) {
    const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(logits(0, c.u, c.v))));
    if (c.positive() ? p < 0.5 + kSatisfiedMargin : p > 0.5 - kSatisfiedMargin) return false;
  }
  return true;
}

template <typename T>
double EnergyProblem<T>::operator()(const Eigen::VectorXd& delta, Eigen::VectorXd& grad, bool* satisfied) const {
  if (static_cast<std::size_t>(delta.size()) != dim()) throw ContractError("delta size does not match the variant");
  grad.resize(delta.size());
  const double inertial = cfg_.lambda * delta.squaredNorm();
  EnergyFn<T> energy = [this, satisfied](const Tensor<T>& logits, Tensor<T>& g) {
    if (satisfied) *satisfied = clicks_satisfied(logits);
    return corrective(logits, &g);
  };
  if (cfg_.variant == Variant::kNone) {
    const Tensor<T> logits = model_->forward_stacked(input_);
    if (satisfied) *satisfied = clicks_satisfied(logits);
    return corrective(logits, nullptr);
  }
  double e = 0;
  if (is_fbrs(cfg_.variant)) {
    const auto r = model_->grad_wrt_aux(*feats_, aux_from(delta), energy);
    const std::size_t c = r.scale_grad.size();
    for (std::size_t i = 0; i < c; ++i) {
      grad[i] = static_cast<double>(r.scale_grad[i]);
      grad[c + i] = static_cast<double>(r.bias_grad[i]);
    }
    e = r.energy;
  } else {
    const auto r = model_->grad_wrt_input(perturbed_input(delta), energy);
    const std::size_t first = cfg_.variant == Variant::kRgb ? 0 : 3 * input_.plane_size();
    for (Eigen::Index i = 0; i < delta.size(); ++i) grad[i] = static_cast<double>(r.grad.data[first + i]);
    e = r.energy;
  }
  grad += 2.0 * cfg_.lambda * delta;
  return e + inertial;
}

template <typename T>
Tensor<T> EnergyProblem<T>::logits(const Eigen::VectorXd& delta) const {
  if (static_cast<std::size_t>(delta.size()) != dim()) throw ContractError("delta size does not match the variant");
  if (cfg_.variant == Variant::kNone) return model_->forward_stacked(input_);
  if (is_fbrs(cfg_.variant)) return model_->head_forward(*feats_, aux_from(delta));
  return model_->forward_stacked(perturbed_input(delta));
}

template <typename T>
double EnergyProblem<T>::value(const Eigen::VectorXd& delta) const {
  return cfg_.lambda * delta.squaredNorm() + corrective(logits(delta), nullptr);
}

template <typename T>
double eval_energy(const EnergyProblem<T>& problem, const Eigen::VectorXd& delta, Eigen::VectorXd* grad) {
  if (!grad) return problem.value(delta);
  return problem(delta, *grad);
}

template class EnergyProblem<float>;
template class EnergyProblem<double>;
template double eval_energy<float>(const EnergyProblem<float>&, const Eigen::VectorXd&, Eigen::VectorXd*);
template double eval_energy<double>(const EnergyProblem<double>&, const Eigen::VectorXd&, Eigen::VectorXd*);

RefineResult refine(const EnergyProblem<float>& problem, const BRSConfig& cfg, const std::vector<double>* warm) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  RefineResult out;
  auto& st = out.state;
  const std::size_t n = problem.dim();
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  if (warm && !warm->empty()) {
    if (warm->size() == n) {
      x0 = Eigen::Map<const Eigen::VectorXd>(warm->data(), static_cast<Eigen::Index>(n));
    } else {
      st.message = "warm start ignored: variable size changed";
    }
  }
  if (cfg.variant == Variant::kNone || problem.clicks().empty()) {
    out.logits = Logits{problem.logits(x0)};
    st.delta.assign(x0.data(), x0.data() + x0.size());
    st.status = LbfgsStatus::kConverged;
    if (cfg.variant != Variant::kNone) st.message = "no clicks: optimization skipped";
  } else {
    // The stop test reuses the logits of the evaluation that produced x.
    Eigen::VectorXd last_x;
    bool last_satisfied = false;
    Objective fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
      const double e = problem(x, g, &last_satisfied);
      last_x = x;
      return e;
    };
    LbfgsOptions opts = cfg.lbfgs();
    bool at_start = true;
    if (cfg.satisfied_stop != SatisfiedStop::kNever)
      opts.stop = [&](const Eigen::VectorXd& x) {
        if (!at_start && cfg.satisfied_stop == SatisfiedStop::kAtStart) return false;
        at_start = false;
        if (x.size() == last_x.size() && x == last_x) return last_satisfied;
        return problem.clicks_satisfied(problem.logits(x));
      };
    LbfgsResult r;
    try {
      r = lbfgs_minimize(fn, x0, opts);
    } catch (const ContractError& e) {
      // Non-finite start: report the unrefined prediction.
      out.logits = Logits{problem.logits(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n)))};
      st.delta.assign(n, 0.0);
      st.warning = true;
      st.status = LbfgsStatus::kNonFinite;
      st.message = e.what();
      st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      return out;
    }
    out.logits = Logits{problem.logits(r.x)};
    st.delta.assign(r.x.data(), r.x.data() + r.x.size());
    st.energy_trace = r.energy_trace;
    st.evals = r.evals;
    st.iterations = r.iterations;
    st.start_energy = r.energy_trace.front();
    st.end_energy = r.f;
    st.status = r.status;
    st.warning = r.warning;
    if (r.warning && st.message.empty()) st.message = "optimizer stopped early: " + to_string(r.status);
  }
  st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

std::string diagnostics_line(const BRSConfig& cfg, const RefinementState& state) {
  nlohmann::json j;
  j["variant"] = to_string(cfg.variant);
  j["lambda"] = cfg.lambda;
  j["iterations"] = state.iterations;
  j["evaluations"] = state.evals;
  j["start_energy"] = state.start_energy;
  j["end_energy"] = state.end_energy;
  j["seconds"] = state.seconds;
  j["status"] = to_string(state.status);
  j["warning"] = state.warning;
  if (!state.message.empty()) j["message"] = state.message;
  return j.dump();
}

}  // namespace fbrs
