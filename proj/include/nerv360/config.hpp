#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "nerv360/model.hpp"
#include "nerv360/trainer.hpp"

namespace nerv360 {

inline constexpr int kConfigVersion = 1;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Missing keys keep their defaults; unknown keys and type mismatches throw
// ConfigError naming the offending key.
nlohmann::json to_json(const ModelConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json to_json(const RunConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);  // requires "version"

RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& cfg);

}  // namespace nerv360
