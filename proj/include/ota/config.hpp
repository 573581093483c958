#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "ota/attr_decomp.hpp"
#include "ota/losses.hpp"
#include "ota/supervision.hpp"
#include "ota/toy_train.hpp"

namespace ota {

struct PathConfig {
  std::string data_in;
  std::string data_out;
  std::string checkpoints;
  std::string transcripts;
};

struct AppConfig {
  PathConfig paths;
  SamplerConfig sampler;
  MalConfig mal;
  LossWeights weights;
  WorldConfig world;  // head dims live here (d_vis, d_txt)
  std::size_t train_steps = 500;
  double train_lr = 0.5;
  std::uint64_t train_seed = 11;
  bool shared_affine = false;
  LlmConfig llm;
  std::string log_level = "info";
};

/// Sections: paths, sampler, mal, weights, head, world, train, llm,
/// log_level. Missing keys keep their defaults; in strict mode an unknown
/// key anywhere is an InputError naming it.
AppConfig config_from_json(const nlohmann::json& j, bool strict = true);
nlohmann::json to_json(const AppConfig& config);

/// Reads the file when given, otherwise starts from defaults.
AppConfig load_config(const std::optional<std::filesystem::path>& path, bool strict = true);

/// OTA_LLM_ENDPOINT, OTA_LLM_MODEL, OTA_LLM_KEY and OTA_LOG, when set.
void apply_env_overrides(AppConfig& config);

/// Checks value ranges; throws InputError.
void validate_config(const AppConfig& config);

TrainConfig train_config(const AppConfig& config);

}  // namespace ota
