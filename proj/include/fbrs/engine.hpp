#pragma once

#include "fbrs/brs.hpp"
#include "fbrs/clicks.hpp"
#include "fbrs/model.hpp"
#include "fbrs/zoom.hpp"

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fbrs {

struct EngineConfig {
  std::string checkpoint;
  BRSConfig brs = BRSConfig::defaults(Variant::kFbrsB);
  bool zoom = true;
  int zoom_target = 400;      // long side of the resized crop
  double zoom_expand = 0.4;
  int zoom_start_click = 3;
  float truncation = 255.0f;  // distance-map clamp, pixels

  void validate() const;
  ZoomState initial_zoom() const;
};

/// What happened on the last click.
struct ClickDiagnostics {
  std::string variant;
  int click_count = 0;
  int net_clicks = 0;     // clicks encoded in the distance maps
  int energy_clicks = 0;  // clicks scored by the corrective energy
  bool zoom_active = false;
  std::optional<CropRect> rect;
  bool cache_hit = false;
  RefinementState refinement;
  double seconds = 0;  // whole click, including the forward pass
  std::size_t mask_pixels = 0;

  friend bool operator==(const ClickDiagnostics&, const ClickDiagnostics&) = default;
};

std::string diagnostics_to_json(const ClickDiagnostics& d, const BRSConfig& cfg);

struct MaskUpdate {
  BinaryMask mask;
  int click_count = 0;
  ClickDiagnostics diagnostics;
};

/// Features at the insertion point for one (click-limited input, crop) key.
struct FeatureCache {
  ClickSet net_clicks;
  std::optional<CropRect> rect;
  FeatureTensor features;

  friend bool operator==(const FeatureCache&, const FeatureCache&) = default;
};

/// Everything an undo has to restore.
struct SessionState {
  ClickSet clicks;
  ZoomState zoom;
  Tensor<float> logits;  // full image, 1 x H x W; empty before the first click
  BinaryMask mask;
  std::vector<double> last_delta;
  std::optional<FeatureCache> cache;
  ClickDiagnostics diagnostics;

  friend bool operator==(const SessionState&, const SessionState&) = default;
};

/// One interactive annotation session. Not thread-safe; callers serialize
/// access per session. The model is shared read-only.
class Session {
 public:
  Session(std::shared_ptr<const Model> model, ImageTensor image, EngineConfig cfg, std::string id = {});

  const std::string& id() const { return id_; }
  const ImageTensor& image() const { return image_; }
  const EngineConfig& config() const { return cfg_; }
  const SessionState& state() const { return state_; }
  const ClickSet& clicks() const { return state_.clicks; }
  const BinaryMask& mask() const { return state_.mask; }
  std::size_t history_depth() const { return history_.size(); }

  /// Probabilities for the whole image; zeros before the first click.
  Tensor<float> prob_map() const;

  /// Runs the click pipeline: click limit, zoom crop, distance maps, forward,
  /// refinement, paste back. The click's index is assigned here.
  MaskUpdate add_click(int u, int v, ClickLabel label);
  MaskUpdate add_click(const Click& click) { return add_click(click.u, click.v, click.label); }

  /// std::nullopt when there is nothing to undo.
  std::optional<MaskUpdate> undo();
  MaskUpdate reset();

  /// Switches configuration and replays the click history under it.
  MaskUpdate set_config(const EngineConfig& cfg);
  MaskUpdate set_brs(const BRSConfig& brs);

  struct OracleResult {
    double iou = 0;          // full image, after optimization
    double start_iou = 0;    // full image, at the session's current delta
    double start_energy = 0;
    double end_energy = 0;
  };
  /// Upper bound for the current state: continues the last f-BRS
  /// optimization with every ground-truth pixel inside the working window as
  /// the corrective target.
  OracleResult oracle(const BinaryMask& gt, int max_iters = 100) const;

  void save(std::ostream& os) const;
  static Session load(std::istream& is, std::shared_ptr<const Model> model);

 private:
  struct Prepared {
    Tensor<float> input;  // stacked, cropped when zoom is active
    ClickSet net_clicks;
    ClickSet energy_clicks;
  };
  Prepared prepare(const SessionState& s) const;
  MaskUpdate update_from_state() const;

  std::shared_ptr<const Model> model_;
  ImageTensor image_;
  EngineConfig cfg_;
  std::string id_;
  SessionState state_;
  std::vector<SessionState> history_;
};

}  // namespace fbrs
