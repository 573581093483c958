#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <cstdlib>
#include <fstream>

#include "ota/attr_decomp.hpp"
#include "ota/errors.hpp"

namespace ota {

using nlohmann::json;

LlmConfig load_llm_config(const std::optional<std::string>& path) {
  LlmConfig config;
  if (path) {
    std::ifstream in(*path);
    if (!in) throw FileNotFound(*path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ParseError(0, *path + ": " + e.what());
    }
    config.endpoint = j.value("endpoint", config.endpoint);
    config.model = j.value("model", config.model);
    config.api_key = j.value("api_key", config.api_key);
    config.timeout_seconds = j.value("timeout_seconds", config.timeout_seconds);
  }
  if (const char* v = std::getenv("OTA_LLM_ENDPOINT")) config.endpoint = v;
  if (const char* v = std::getenv("OTA_LLM_MODEL")) config.model = v;
  if (const char* v = std::getenv("OTA_LLM_KEY")) config.api_key = v;
  return config;
}

HttpChatClient::HttpChatClient(LlmConfig config) : config_(std::move(config)) {
  const auto scheme_end = config_.endpoint.find("://");
  if (scheme_end == std::string::npos) throw std::invalid_argument("endpoint must be an absolute URL: " + config_.endpoint);
  const auto path_start = config_.endpoint.find('/', scheme_end + 3);
  base_ = config_.endpoint.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : config_.endpoint.substr(path_start);
}

std::string HttpChatClient::complete(const ChatRequest& request) {
  httplib::Client client(base_);
  client.set_connection_timeout(config_.timeout_seconds, 0);
  client.set_read_timeout(config_.timeout_seconds, 0);
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  const auto response = client.Post(path_, headers, to_json(request).dump(), "application/json");
  if (!response) throw TransportError("request to " + config_.endpoint + " failed: " + httplib::to_string(response.error()));
  if (response->status != 200)
    throw TransportError("endpoint returned HTTP " + std::to_string(response->status));
  return first_choice_content(response->body);
}

}  // namespace ota
