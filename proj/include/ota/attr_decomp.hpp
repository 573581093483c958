#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ota/data_model.hpp"

namespace ota {

/// Aspects the extraction prompt lists. Anything else is kept but flagged.
extern const std::vector<std::string> kKnownAspects;

inline constexpr std::string_view kPromptVersion = "attr-extract/1";

struct DecompositionResult {
  std::string primary_target;
  std::vector<Attribute> attributes;
  std::string analysis;

  friend bool operator==(const DecompositionResult&, const DecompositionResult&) = default;
};

enum class Severity { hard, soft };
enum class Verdict { accept, reject };

struct Violation {
  std::string rule_id;
  std::string message;
  Severity severity = Severity::hard;
  std::optional<std::size_t> attribute;
};

struct AttributeFlags {
  bool verbatim = true;
  bool evidence_verbatim = true;
  bool confidence_in_range = true;
  bool known_aspect = true;
};

struct ValidationReport {
  Verdict verdict = Verdict::accept;
  std::vector<Violation> violations;
  std::vector<AttributeFlags> attribute_flags;
  std::size_t attempt_count = 0;

  bool accepted() const { return verdict == Verdict::accept; }
  std::size_t hard_count() const;
  bool has_rule(std::string_view rule_id) const;
};

/// Full extraction prompt with the caption interpolated as a JSON-style
/// quoted string. Throws std::invalid_argument on a blank caption.
std::string build_prompt(std::string_view caption);

/// The prompt template with a `{caption}` placeholder.
const std::string& prompt_template();

/// Parses a model reply. Markdown fences around the object are stripped.
/// Throws ParseError naming the offending field.
DecompositionResult parse_response(std::string_view raw);

/// Inverse of parse_response (the appendix output schema).
nlohmann::json to_json(const DecompositionResult& result);

/// Hard rules: verbatim descriptions and evidence, confidence in [0,1],
/// non-empty attributes. Soft rules: missing category, more than a_max
/// attributes, unknown aspect.
///
/// Evidence strings ending in "..." are treated as truncated quotes: the text
/// before the ellipsis must be a caption substring.
ValidationReport validate(std::string_view caption, const DecompositionResult& result, std::size_t a_max = 10);

/// Keeps at most a_max attributes; the first category attribute goes first,
/// the rest keep their order.
DecompositionResult truncate_attributes(DecompositionResult result, std::size_t a_max);

/// Offline rule-based decomposition. Every description is a verbatim caption
/// span, so the output always validates.
DecompositionResult mock_decompose(std::string_view caption, std::uint64_t seed);

nlohmann::json to_json(const ValidationReport& report);

// Chat-completion transport.

struct ChatMessage {
  std::string role;
  std::string content;
};

struct ChatRequest {
  std::string model;
  double temperature = 0.0;
  std::vector<ChatMessage> messages;
  /// Not sent on the wire; lets offline clients see the raw caption.
  std::string caption;
};

nlohmann::json to_json(const ChatRequest& request);

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Returns the first choice's message content. Implementations must be safe
/// to call from several threads.
class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string complete(const ChatRequest& request) = 0;
};

/// Answers with mock_decompose serialized as JSON.
class MockLlmClient : public LlmClient {
 public:
  explicit MockLlmClient(std::uint64_t seed) : seed_(seed) {}
  std::string complete(const ChatRequest& request) override;

 private:
  std::uint64_t seed_;
};

struct LlmConfig {
  std::string endpoint;  // e.g. https://host/v1/chat/completions
  std::string model;
  std::string api_key;
  int timeout_seconds = 120;
};

/// Reads {"endpoint","model","api_key","timeout_seconds"} from an optional
/// JSON file, then applies OTA_LLM_ENDPOINT / OTA_LLM_MODEL / OTA_LLM_KEY.
LlmConfig load_llm_config(const std::optional<std::string>& path);

class HttpChatClient : public LlmClient {
 public:
  explicit HttpChatClient(LlmConfig config);
  std::string complete(const ChatRequest& request) override;

 private:
  LlmConfig config_;
  std::string base_;  // scheme://host[:port]
  std::string path_;
};

/// Extracts choices[0].message.content from a chat-completions reply.
std::string first_choice_content(std::string_view body);

struct DecomposeOptions {
  std::string model;
  std::size_t retries = 2;
  std::uint64_t seed = 0;
  std::size_t a_max = 10;
  int backoff_base_ms = 250;
};

struct DecomposeOutcome {
  std::optional<DecompositionResult> result;
  ValidationReport report;
  nlohmann::json transcript;  // one entry per attempt
  std::optional<std::string> error;
};

/// Prompts the client and validates the reply. Rejected or failed attempts
/// are retried up to `retries` more times with exponential backoff. The
/// returned result is truncated to a_max attributes.
DecomposeOutcome decompose(LlmClient& client, std::string_view caption, const DecomposeOptions& options);

struct CaptionJob {
  std::string id;
  std::string caption;
};

/// Runs decompose over many captions with at most `concurrency` requests in
/// flight. Results are keyed by job id.
std::map<std::string, DecomposeOutcome> decompose_all(LlmClient& client, std::span<const CaptionJob> jobs,
                                                      const DecomposeOptions& options, std::size_t concurrency);

}  // namespace ota
