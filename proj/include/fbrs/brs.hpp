#pragma once

#include "fbrs/clicks.hpp"
#include "fbrs/lbfgs.hpp"
#include "fbrs/model.hpp"

#include <optional>
#include <string>
#include <vector>

namespace fbrs {

inline constexpr double kSatisfiedMargin = 0.01;

/// When refinement ends because every click already has its label (see
/// EnergyProblem::clicks_satisfied): never, only at the start point, or at
/// the start point and after any accepted iterate.
enum class SatisfiedStop { kNever, kAtStart, kAnyIterate };
std::string to_string(SatisfiedStop s);
SatisfiedStop satisfied_stop_from_string(const std::string& s);

/// kNone runs the plain feed-forward network.
enum class Variant { kNone, kRgb, kDistmap, kFbrsA, kFbrsB, kFbrsC };

std::string to_string(Variant v);
/// Accepts "none", "rgb", "distmap", "fbrs_a", "fbrs_b", "fbrs_c".
Variant variant_from_string(const std::string& s);
bool is_fbrs(Variant v);
InsertionPoint insertion_point(Variant v);

struct BRSConfig {
  Variant variant = Variant::kFbrsB;
  double lambda = 1e-4;
  int max_lbfgs_iters = 20;
  double grad_tolerance = 1e-5;
  int history_size = 10;
  bool warm_start = false;
  int click_limit = 8;  // clicks encoded as distance maps; 0 passes all
  SatisfiedStop satisfied_stop = SatisfiedStop::kAtStart;

  /// Per-variant defaults for lambda, warm start and click limit.
  static BRSConfig defaults(Variant v);
  void validate() const;
  LbfgsOptions lbfgs() const;

  friend bool operator==(const BRSConfig&, const BRSConfig&) = default;
};

struct RefinementState {
  std::vector<double> delta;
  std::vector<double> energy_trace;
  int evals = 0;
  int iterations = 0;
  double start_energy = 0;
  double end_energy = 0;
  double seconds = 0;
  LbfgsStatus status = LbfgsStatus::kConverged;
  bool warning = false;
  std::string message;

  friend bool operator==(const RefinementState&, const RefinementState&) = default;
};

/// The refinement objective for one prediction. Holds the stacked network
/// input (image + click-limited distance maps) and the clicks scored by the
/// corrective term, all in the coordinates of that input. For fbrs variants the
/// features at the insertion point are computed once here, or taken from
/// `cached`, and only the head is re-evaluated afterwards.
template <typename T>
class EnergyProblem {
 public:
  EnergyProblem(const Model& model, Tensor<T> input, ClickSet clicks, const BRSConfig& cfg,
                const Features<T>* cached = nullptr);

  /// Size of the optimization variable.
  std::size_t dim() const;
  /// lambda * |delta|^2 + sum_i (sigmoid(logit at click i) - label_i)^2.
  /// With `satisfied`, also reports clicks_satisfied() for these logits.
  double operator()(const Eigen::VectorXd& delta, Eigen::VectorXd& grad, bool* satisfied = nullptr) const;
  /// Energy without the gradient.
  double value(const Eigen::VectorXd& delta) const;
  Tensor<T> logits(const Eigen::VectorXd& delta) const;

  /// Every click's probability is on its label's side of 0.5 by at least
  /// kSatisfiedMargin.
  bool clicks_satisfied(const Tensor<T>& logits) const;

  const Features<T>* features() const { return feats_ ? &*feats_ : nullptr; }
  const Tensor<T>& input() const { return input_; }
  const ClickSet& clicks() const { return clicks_; }

  /// Replaces the click term by a dense one: sum over pixels of
  /// (sigmoid(logit) - target)^2.
  void set_dense_target(Tensor<T> target);

 private:
  double corrective(const Tensor<T>& logits, Tensor<T>* grad) const;
  Tensor<T> perturbed_input(const Eigen::VectorXd& delta) const;
  Aux<T> aux_from(const Eigen::VectorXd& delta) const;

  const Model* model_;
  Tensor<T> input_;
  ClickSet clicks_;
  BRSConfig cfg_;
  std::optional<Features<T>> feats_;
  std::optional<Tensor<T>> dense_;
};

/// Shorthand for EnergyProblem::operator() on a fresh problem.
template <typename T>
double eval_energy(const EnergyProblem<T>& problem, const Eigen::VectorXd& delta, Eigen::VectorXd* grad = nullptr);

struct RefineResult {
  Logits logits;
  RefinementState state;
};

/// Minimizes the problem's energy from `warm` (or from zero) and returns the
/// logits at the best point found. With variant kNone this is a plain forward.
/// An empty click set skips optimization.
RefineResult refine(const EnergyProblem<float>& problem, const BRSConfig& cfg,
                    const std::vector<double>* warm = nullptr);

/// One structured log line (JSON) describing a refinement.
std::string diagnostics_line(const BRSConfig& cfg, const RefinementState& state);

}  // namespace fbrs
