#include "fbrs/checkpoint.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace fbrs {

namespace {

constexpr char kMagic[8] = {'F', 'B', 'R', 'S', 'C', 'K', 'P', 'T'};

template <typename U>
U to_le(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    std::reverse(b, b + sizeof(U));
    std::memcpy(&v, b, sizeof(U));
  }
  return v;
}

void put_u32(std::ostream& os, std::uint32_t v) {
  v = to_le(v);
  os.write(reinterpret_cast<const char*>(&v), 4);
}

void put_floats(std::ostream& os, const std::vector<float>& v) {
  for (float f : v) {
    const auto bits = to_le(std::bit_cast<std::uint32_t>(f));
    os.write(reinterpret_cast<const char*>(&bits), 4);
  }
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw ContractError("checkpoint truncated");
  return to_le(v);
}

std::vector<float> get_floats(std::istream& is, std::size_t n) {
  std::vector<float> out(n);
  for (auto& f : out) f = std::bit_cast<float>(get_u32(is));
  return out;
}

std::size_t product(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["dmf_hidden"] = c.dmf_hidden;
  j["leaky_slope"] = c.leaky_slope;
  j["stage_widths"] = c.stage_widths;
  j["aspp_branch_width"] = c.aspp_branch_width;
  j["aspp_dilations"] = c.aspp_dilations;
  j["channels_b"] = c.channels_b;
  j["low_level_width"] = c.low_level_width;
  j["channels_c"] = c.channels_c;
  j["tail_blocks"] = c.tail_blocks;
  j["seed"] = c.seed;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  ModelConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.dmf_hidden = j.at("dmf_hidden").get<int>();
    c.leaky_slope = j.at("leaky_slope").get<double>();
    c.stage_widths = j.at("stage_widths").get<std::array<int, 3>>();
    c.aspp_branch_width = j.at("aspp_branch_width").get<int>();
    c.aspp_dilations = j.at("aspp_dilations").get<std::array<int, 2>>();
    c.channels_b = j.at("channels_b").get<int>();
    c.low_level_width = j.at("low_level_width").get<int>();
    c.channels_c = j.at("channels_c").get<int>();
    c.tail_blocks = j.at("tail_blocks").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

void save_checkpoint(const std::string& path, const Model& model, const TrainingState* training,
                     const std::string& log_json) {
  const auto& params = model.params();
  nlohmann::json header;
  header["config"] = nlohmann::json::parse(model_config_to_json(model.config()));
  header["log"] = nlohmann::json::parse(log_json);
  header["tensors"] = params.size();
  header["training"] = training != nullptr;
  if (training) {
    if (training->adam.m.size() != params.size() || training->adam.v.size() != params.size())
      throw ContractError("optimizer state does not match the parameters");
    header["epochs_done"] = training->epochs_done;
    header["adam_step"] = training->adam.step;
  }
  const std::string text = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint " + tmp);
    os.write(kMagic, sizeof kMagic);
    put_u32(os, kCheckpointVersion);
    put_u32(os, static_cast<std::uint32_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : params) {
      put_u32(os, static_cast<std::uint32_t>(p.name.size()));
      os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
      put_u32(os, static_cast<std::uint32_t>(p.shape.size()));
      for (int d : p.shape) put_u32(os, static_cast<std::uint32_t>(d));
      put_floats(os, p.value);
    }
    if (training) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (training->adam.m[i].size() != params[i].value.size() || training->adam.v[i].size() != params[i].value.size())
          throw ContractError("optimizer state does not match the parameters");
        put_floats(os, training->adam.m[i]);
        put_floats(os, training->adam.v[i]);
      }
    }
    os.flush();
    if (!os) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read checkpoint " + path);
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw ContractError("not a checkpoint file: " + path);
  const auto version = get_u32(is);
  if (version != kCheckpointVersion)
    throw ContractError("unsupported checkpoint version " + std::to_string(version));
  const auto len = get_u32(is);
  std::string text(len, '\0');
  if (!is.read(text.data(), len)) throw ContractError("checkpoint truncated");

  Checkpoint ck;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    ck.config = model_config_from_json(header.at("config").dump());
    ck.log_json = header.at("log").dump();
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("malformed checkpoint header: ") + e.what());
  }
  const auto count = header.at("tensors").get<std::size_t>();
  for (std::size_t i = 0; i < count; ++i) {
    nn::Param p;
    p.name.resize(get_u32(is));
    if (!is.read(p.name.data(), static_cast<std::streamsize>(p.name.size()))) throw ContractError("checkpoint truncated");
    const auto rank = get_u32(is);
    if (rank > 8) throw ContractError("implausible tensor rank in checkpoint");
    for (std::uint32_t r = 0; r < rank; ++r) p.shape.push_back(static_cast<int>(get_u32(is)));
    p.value = get_floats(is, product(p.shape));
    ck.params.push_back(std::move(p));
  }
  if (header.at("training").get<bool>()) {
    TrainingState t;
    t.epochs_done = header.at("epochs_done").get<int>();
    t.adam.step = header.at("adam_step").get<std::int64_t>();
    for (const auto& p : ck.params) {
      t.adam.m.push_back(get_floats(is, p.value.size()));
      t.adam.v.push_back(get_floats(is, p.value.size()));
    }
    ck.training = std::move(t);
  }
  return ck;
}

Model model_from_checkpoint(const Checkpoint& ck) {
  Model model(ck.config);
  auto& store = model.params();
  if (store.size() != ck.params.size()) throw ContractError("checkpoint tensor count does not match the model");
  for (const auto& p : ck.params) {
    auto* dst = store.find(p.name);
    if (!dst) throw ContractError("checkpoint has unknown tensor " + p.name);
    if (dst->shape != p.shape) throw ContractError("shape mismatch for tensor " + p.name);
    for (float v : p.value)
      if (!std::isfinite(v)) throw ContractError("non-finite weight in tensor " + p.name);
    dst->value = p.value;
  }
  return model;
}

Model load_model(const std::string& path) { return model_from_checkpoint(read_checkpoint(path)); }

}  // namespace fbrs
