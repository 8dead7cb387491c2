#pragma once

#include "fbrs/checkpoint.hpp"
#include "fbrs/losses.hpp"
#include "fbrs/model.hpp"
#include "fbrs/synthetic.hpp"

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace fbrs {

struct TrainConfig {
  LossKind loss = LossKind::kNfl;
  double gamma = 2.0;
  NflNormalization normalization = NflNormalization::kGradientMass;
  bool per_image = false;
  int epochs = 100;
  int phase2_epochs = 20;  // trailing epochs at lr_phase2
  double lr = 1e-3;
  double lr_phase2 = 1e-4;
  double backbone_lr_mult = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 8;
  int crop_height = 64;
  int crop_width = 64;
  double min_scale = 0.75;
  double max_scale = 1.25;
  bool augment = true;
  std::uint64_t seed = 0;
  int train_samples = 1000;
  int val_samples = 100;
  int image_size = 88;
  std::string checkpoint;  // written after every epoch when non-empty

  void validate() const;
  LossConfig loss_config() const;
  /// Learning rate for a 0-based epoch.
  double lr_at(int epoch) const;
};

/// Applies one "key = value" setting; unknown keys are a ContractError.
void set_train_option(TrainConfig& cfg, const std::string& key, const std::string& value);

/// Key-value text: one "key = value" per line, '#' starts a comment.
TrainConfig parse_train_config(std::istream& is, TrainConfig base = {});
TrainConfig load_train_config(const std::string& path, TrainConfig base = {});
std::string train_config_to_text(const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double loss = 0;
  double val_iou = 0;
  double lr = 0;
  double seconds = 0;
  int steps = 0;
};

std::string epoch_records_to_json(const std::vector<EpochRecord>& log);
std::vector<EpochRecord> epoch_records_from_json(const std::string& text);

struct TrainResult {
  std::vector<EpochRecord> log;  // includes records restored from a resumed checkpoint
  TrainingState state;
  bool diverged = false;
  std::string message;
};

/// Mean IoU after a single simulated first click, no refinement.
double first_click_iou(const Model& model, const std::vector<SyntheticSample>& samples);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Adam training with per-batch loss. Every epoch draws its augmentations
/// and clicks from a stream seeded by (seed, epoch), so resuming reproduces
/// the uninterrupted run. A non-finite loss or gradient restores the weights
/// of the last completed epoch and stops with `diverged` set.
TrainResult train(Model& model, const std::vector<SyntheticSample>& train_set,
                  const std::vector<SyntheticSample>& val_set, const TrainConfig& cfg,
                  const Checkpoint* resume = nullptr, const EpochCallback& on_epoch = {});

}  // namespace fbrs
