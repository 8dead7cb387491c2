#pragma once

#include "fbrs/model.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fbrs {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct AdamState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  std::int64_t step = 0;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct TrainingState {
  int epochs_done = 0;
  AdamState adam;

  friend bool operator==(const TrainingState&, const TrainingState&) = default;
};

struct Checkpoint {
  ModelConfig config;
  std::vector<nn::Param> params;
  std::optional<TrainingState> training;
  std::string log_json = "[]";  // per-epoch records
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

/// Binary layout: "FBRSCKPT", u32 version, u32 header length, JSON header
/// (config, log, tensor count, training flag), then per tensor
/// u32 name length, name, u32 rank, u32 dims..., float32 values; then the
/// optional Adam moments in parameter order. Integers and floats are
/// little-endian. Written to a temporary file and renamed into place.
void save_checkpoint(const std::string& path, const Model& model, const TrainingState* training = nullptr,
                     const std::string& log_json = "[]");

Checkpoint read_checkpoint(const std::string& path);

/// Builds the model from the stored config and copies the weights in,
/// checking names and shapes.
Model model_from_checkpoint(const Checkpoint& ckpt);
Model load_model(const std::string& path);

}  // namespace fbrs
