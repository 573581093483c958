#include "ota/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "ota/errors.hpp"

namespace ota {

namespace {

using nlohmann::json;

void check_keys(const json& section, const std::string& where, const std::set<std::string>& allowed, bool strict) {
  if (!section.is_object()) throw InputError("config: " + where + " must be an object");
  if (!strict) return;
  for (const auto& [key, value] : section.items())
    if (!allowed.contains(key)) throw InputError("config: unknown key " + (where.empty() ? key : where + "." + key));
}

template <typename T>
void read(const json& section, const char* key, T& out, const std::string& where) {
  if (!section.contains(key)) return;
  try {
    out = section.at(key).get<T>();
  } catch (const json::exception&) {
    throw InputError("config: bad value for " + where + "." + key);
  }
}

}  // namespace

AppConfig config_from_json(const json& j, bool strict) {
  AppConfig c;
  check_keys(j, "", {"paths", "sampler", "mal", "weights", "head", "world", "train", "llm", "log_level"}, strict);

  if (j.contains("paths")) {
    const auto& s = j.at("paths");
    check_keys(s, "paths", {"data_in", "data_out", "checkpoints", "transcripts"}, strict);
    read(s, "data_in", c.paths.data_in, "paths");
    read(s, "data_out", c.paths.data_out, "paths");
    read(s, "checkpoints", c.paths.checkpoints, "paths");
    read(s, "transcripts", c.paths.transcripts, "paths");
  }
  if (j.contains("sampler")) {
    const auto& s = j.at("sampler");
    check_keys(s, "sampler", {"q_max", "a_max", "seed", "shuffle"}, strict);
    read(s, "q_max", c.sampler.q_max, "sampler");
    read(s, "a_max", c.sampler.a_max, "sampler");
    read(s, "seed", c.sampler.seed, "sampler");
    read(s, "shuffle", c.sampler.shuffle, "sampler");
  }
  if (j.contains("mal")) {
    const auto& s = j.at("mal");
    check_keys(s, "mal", {"gamma", "alpha_neg"}, strict);
    read(s, "gamma", c.mal.gamma, "mal");
    read(s, "alpha_neg", c.mal.alpha_neg, "mal");
  }
  if (j.contains("weights")) {
    const auto& s = j.at("weights");
    check_keys(s, "weights", {"query", "attr", "box", "giou", "fgl", "ddf"}, strict);
    read(s, "query", c.weights.query, "weights");
    read(s, "attr", c.weights.attr, "weights");
    read(s, "box", c.weights.box, "weights");
    read(s, "giou", c.weights.giou, "weights");
    read(s, "fgl", c.weights.fgl, "weights");
    read(s, "ddf", c.weights.ddf, "weights");
  }
  if (j.contains("head")) {
    const auto& s = j.at("head");
    check_keys(s, "head", {"d_vis", "d_txt", "shared_affine"}, strict);
    read(s, "d_vis", c.world.d_vis, "head");
    read(s, "d_txt", c.world.d_txt, "head");
    read(s, "shared_affine", c.shared_affine, "head");
  }
  if (j.contains("world")) {
    const auto& s = j.at("world");
    check_keys(s, "world", {"seed", "n_images", "queries_per_image", "max_attrs_per_query", "extra_slots", "jitter"}, strict);
    read(s, "seed", c.world.seed, "world");
    read(s, "n_images", c.world.n_images, "world");
    read(s, "queries_per_image", c.world.queries_per_image, "world");
    read(s, "max_attrs_per_query", c.world.max_attrs_per_query, "world");
    read(s, "extra_slots", c.world.extra_slots, "world");
    read(s, "jitter", c.world.jitter, "world");
  }
  if (j.contains("train")) {
    const auto& s = j.at("train");
    check_keys(s, "train", {"steps", "lr", "seed"}, strict);
    read(s, "steps", c.train_steps, "train");
    read(s, "lr", c.train_lr, "train");
    read(s, "seed", c.train_seed, "train");
  }
  if (j.contains("llm")) {
    const auto& s = j.at("llm");
    check_keys(s, "llm", {"endpoint", "model", "api_key", "timeout_seconds"}, strict);
    read(s, "endpoint", c.llm.endpoint, "llm");
    read(s, "model", c.llm.model, "llm");
    read(s, "api_key", c.llm.api_key, "llm");
    read(s, "timeout_seconds", c.llm.timeout_seconds, "llm");
  }
  read(j, "log_level", c.log_level, "config");
  return c;
}

json to_json(const AppConfig& c) {
  return {{"paths",
           {{"data_in", c.paths.data_in},
            {"data_out", c.paths.data_out},
            {"checkpoints", c.paths.checkpoints},
            {"transcripts", c.paths.transcripts}}},
          {"sampler",
           {{"q_max", c.sampler.q_max}, {"a_max", c.sampler.a_max}, {"seed", c.sampler.seed}, {"shuffle", c.sampler.shuffle}}},
          {"mal", {{"gamma", c.mal.gamma}, {"alpha_neg", c.mal.alpha_neg}}},
          {"weights",
           {{"query", c.weights.query},
            {"attr", c.weights.attr},
            {"box", c.weights.box},
            {"giou", c.weights.giou},
            {"fgl", c.weights.fgl},
            {"ddf", c.weights.ddf}}},
          {"head", {{"d_vis", c.world.d_vis}, {"d_txt", c.world.d_txt}, {"shared_affine", c.shared_affine}}},
          {"world",
           {{"seed", c.world.seed},
            {"n_images", c.world.n_images},
            {"queries_per_image", c.world.queries_per_image},
            {"max_attrs_per_query", c.world.max_attrs_per_query},
            {"extra_slots", c.world.extra_slots},
            {"jitter", c.world.jitter}}},
          {"train", {{"steps", c.train_steps}, {"lr", c.train_lr}, {"seed", c.train_seed}}},
          // The key is never echoed back.
          {"llm", {{"endpoint", c.llm.endpoint}, {"model", c.llm.model}, {"timeout_seconds", c.llm.timeout_seconds}}},
          {"log_level", c.log_level}};
}

AppConfig load_config(const std::optional<std::filesystem::path>& path, bool strict) {
  if (!path) return {};
  std::ifstream in(*path);
  if (!in) throw FileNotFound(path->string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(0, path->string() + ": " + e.what());
  }
  return config_from_json(j, strict);
}

void apply_env_overrides(AppConfig& c) {
  if (const char* v = std::getenv("OTA_LLM_ENDPOINT")) c.llm.endpoint = v;
  if (const char* v = std::getenv("OTA_LLM_MODEL")) c.llm.model = v;
  if (const char* v = std::getenv("OTA_LLM_KEY")) c.llm.api_key = v;
  if (const char* v = std::getenv("OTA_LOG")) c.log_level = v;
}

void validate_config(const AppConfig& c) {
  validate_sampler_config(c.sampler);
  if (!(c.mal.gamma >= 0.0)) throw InputError("config: mal.gamma must be >= 0");
  if (!(c.mal.alpha_neg >= 0.0)) throw InputError("config: mal.alpha_neg must be >= 0");
  if (c.world.d_vis == 0 || c.world.d_txt == 0) throw InputError("config: head dims must be positive");
  if (!(c.train_lr >= 0.0)) throw InputError("config: train.lr must be >= 0");
  static const std::set<std::string> levels = {"trace", "debug", "info", "warn", "error", "off"};
  if (!levels.contains(c.log_level)) throw InputError("config: unknown log level " + c.log_level);
}

TrainConfig train_config(const AppConfig& c) {
  TrainConfig t;
  t.steps = c.train_steps;
  t.lr = c.train_lr;
  t.weights = c.weights;
  t.mal = c.mal;
  t.sampler = c.sampler;
  t.seed = c.train_seed;
  t.shared_affine = c.shared_affine;
  return t;
}

}  // namespace ota
