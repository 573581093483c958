#include "ota/attr_decomp.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <mutex>
#include <set>
#include <stdexcept>
#include <thread>

#include "ota/rng.hpp"
#include "ota/text.hpp"

namespace ota {

using nlohmann::json;

const std::vector<std::string> kKnownAspects = {
    "category", "color",       "size",     "shape",    "material",         "texture",  "number",      "state",
    "part",     "text",        "brand",    "activity", "pose",             "status",   "position",    "orientation",
    "spatial_relation", "distance", "environment", "weather", "time", "context", "purpose", "other"};

std::size_t ValidationReport::hard_count() const {
  return static_cast<std::size_t>(std::count_if(violations.begin(), violations.end(),
                                                [](const Violation& v) { return v.severity == Severity::hard; }));
}

bool ValidationReport::has_rule(std::string_view rule_id) const {
  return std::any_of(violations.begin(), violations.end(), [&](const Violation& v) { return v.rule_id == rule_id; });
}

std::string build_prompt(std::string_view caption) {
  if (trim(caption).empty()) throw std::invalid_argument("build_prompt: caption must not be empty");
  // json::dump gives a quoted string with quotes and backslashes escaped.
  const std::string quoted = json(std::string(caption)).dump(-1, ' ', false, json::error_handler_t::replace);
  std::string prompt = prompt_template();
  const std::string placeholder = "{caption}";
  prompt.replace(prompt.find(placeholder), placeholder.size(), quoted);
  return prompt;
}

namespace {

std::string strip_fences(std::string_view raw) {
  std::string text = trim(raw);
  if (text.starts_with("```")) {
    const auto newline = text.find('\n');
    const auto first_brace = text.find('{');
    // "```json\n{...}" or "```json {...}"
    const auto cut = std::min(newline == std::string::npos ? text.size() : newline + 1,
                              first_brace == std::string::npos ? text.size() : first_brace);
    text.erase(0, cut);
    const auto closing = text.rfind("```");
    if (closing != std::string::npos) text.erase(closing);
    text = trim(text);
  }
  return text;
}

const json& require_field(const json& object, const char* field) {
  if (!object.contains(field)) throw ParseError(0, std::string("missing field '") + field + "'");
  return object.at(field);
}

std::string require_string(const json& object, const char* field) {
  const json& value = require_field(object, field);
  if (!value.is_string()) throw ParseError(0, std::string("field '") + field + "' must be a string");
  return value.get<std::string>();
}

bool is_known_aspect(const std::string& aspect) {
  return std::find(kKnownAspects.begin(), kKnownAspects.end(), aspect) != kKnownAspects.end();
}

bool evidence_is_verbatim(std::string_view caption, std::string_view evidence) {
  std::string quote = trim(evidence);
  for (std::string_view ellipsis : {std::string_view("..."), std::string_view("…")}) {
    if (quote.size() > ellipsis.size() && std::string_view(quote).ends_with(ellipsis)) {
      quote.resize(quote.size() - ellipsis.size());
      break;
    }
  }
  return !quote.empty() && contains_verbatim(caption, quote);
}

}  // namespace

DecompositionResult parse_response(std::string_view raw) {
  const std::string body = strip_fences(raw);
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw ParseError(0, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError(0, "reply is not a JSON object");

  DecompositionResult result;
  result.primary_target = require_string(j, "primary_target");
  const json& attributes = require_field(j, "attributes");
  if (!attributes.is_array()) throw ParseError(0, "field 'attributes' must be an array");
  for (std::size_t i = 0; i < attributes.size(); ++i) {
    const json& a = attributes[i];
    if (!a.is_object()) throw ParseError(0, "attributes[" + std::to_string(i) + "] is not an object");
    Attribute attr;
    attr.aspect = require_string(a, "aspect");
    attr.description = require_string(a, "description");
    if (a.contains("caption_evidence")) {
      const json& evidence = a.at("caption_evidence");
      if (!evidence.is_array()) throw ParseError(0, "field 'caption_evidence' must be an array");
      for (const auto& e : evidence) {
        if (!e.is_string()) throw ParseError(0, "caption_evidence entries must be strings");
        attr.evidence.push_back(e.get<std::string>());
      }
    }
    if (a.contains("confidence")) {
      if (!a.at("confidence").is_number())
        throw ParseError(0, "field 'confidence' of attributes[" + std::to_string(i) + "] is not numeric");
      attr.confidence = a.at("confidence").get<double>();
    }
    result.attributes.push_back(std::move(attr));
  }
  if (j.contains("analysis") && j.at("analysis").is_string()) result.analysis = j.at("analysis").get<std::string>();
  return result;
}

json to_json(const DecompositionResult& result) {
  json attributes = json::array();
  for (const auto& a : result.attributes)
    attributes.push_back({{"aspect", a.aspect},
                          {"description", a.description},
                          {"caption_evidence", a.evidence},
                          {"confidence", a.confidence}});
  return {{"primary_target", result.primary_target}, {"attributes", attributes}, {"analysis", result.analysis}};
}

ValidationReport validate(std::string_view caption, const DecompositionResult& result, std::size_t a_max) {
  ValidationReport report;
  auto add = [&](std::string rule, std::string message, Severity severity, std::optional<std::size_t> index) {
    report.violations.push_back({std::move(rule), std::move(message), severity, index});
  };

  if (result.attributes.empty()) add("non-empty", "no attributes extracted", Severity::hard, std::nullopt);

  bool has_category = false;
  for (std::size_t i = 0; i < result.attributes.size(); ++i) {
    const Attribute& a = result.attributes[i];
    AttributeFlags flags;
    if (a.description.empty() || !contains_verbatim(caption, a.description)) {
      flags.verbatim = false;
      add("verbatim-description", "description '" + a.description + "' is not a caption substring", Severity::hard, i);
    }
    for (const auto& e : a.evidence) {
      if (!evidence_is_verbatim(caption, e)) {
        flags.evidence_verbatim = false;
        add("verbatim-evidence", "evidence '" + e + "' is not a caption substring", Severity::hard, i);
      }
    }
    if (!(a.confidence >= 0.0 && a.confidence <= 1.0)) {
      flags.confidence_in_range = false;
      add("confidence-range", "confidence outside [0,1]", Severity::hard, i);
    }
    if (!is_known_aspect(a.aspect)) {
      flags.known_aspect = false;
      add("unknown-aspect", "aspect '" + a.aspect + "' is not in the listed taxonomy", Severity::soft, i);
    }
    has_category = has_category || a.aspect == "category";
    report.attribute_flags.push_back(flags);
  }
  if (!result.attributes.empty() && !has_category)
    add("missing-category", "no category attribute", Severity::soft, std::nullopt);
  if (result.attributes.size() > a_max)
    add("over-limit", std::to_string(result.attributes.size()) + " attributes exceed the limit of " + std::to_string(a_max),
        Severity::soft, std::nullopt);

  report.verdict = report.hard_count() > 0 ? Verdict::reject : Verdict::accept;
  return report;
}

DecompositionResult truncate_attributes(DecompositionResult result, std::size_t a_max) {
  result.attributes = limit_attributes(result.attributes, a_max);
  return result;
}

namespace {

struct Token {
  std::size_t begin;
  std::size_t end;
  std::string lower;
};

std::vector<Token> tokenize(std::string_view text, std::size_t offset) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  auto is_sep = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
  while (i < text.size()) {
    while (i < text.size() && is_sep(text[i])) ++i;
    const std::size_t begin = i;
    while (i < text.size() && !is_sep(text[i])) ++i;
    if (i > begin) {
      std::string lower(text.substr(begin, i - begin));
      std::transform(lower.begin(), lower.end(), lower.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      while (!lower.empty() && (lower.back() == '.' || lower.back() == ';' || lower.back() == ':')) lower.pop_back();
      tokens.push_back({offset + begin, offset + i, lower});
    }
  }
  return tokens;
}

const std::set<std::string>& color_lexicon() {
  static const std::set<std::string> words = {"black", "white", "red",    "green",  "blue",   "yellow", "gray",
                                              "grey",  "orange", "brown", "purple", "pink",   "silver", "golden",
                                              "cyan",  "beige"};
  return words;
}

const std::set<std::string>& size_lexicon() {
  static const std::set<std::string> words = {"small", "large", "big", "tiny", "huge", "long", "short", "little"};
  return words;
}

// Words that never start or continue the category run.
const std::set<std::string>& function_words() {
  static const std::set<std::string> words = {
      "a",    "an",    "the",   "this",   "that",   "these",  "those", "is",    "are",   "was",   "be",
      "on",   "in",    "at",    "of",     "near",   "with",   "by",    "to",    "from",  "and",   "or",
      "next", "behind", "above", "below", "under",  "between", "beside", "left", "right", "top",   "bottom",
      "which", "who",  "its",   "it",     "there",  "for",    "onto",  "into",  "along", "across", "middle",
      "center", "upper", "lower", "front", "side"};
  return words;
}

}  // namespace

DecompositionResult mock_decompose(std::string_view caption, std::uint64_t seed) {
  Rng rng(derive_seed(seed, caption));
  DecompositionResult result;
  auto span_of = [&](std::size_t begin, std::size_t end) { return std::string(caption.substr(begin, end - begin)); };
  auto confidence = [&] { return 0.9 + 0.1 * rng.uniform_real(); };

  const std::size_t first_comma = caption.find(',');
  const std::size_t head_end = first_comma == std::string_view::npos ? caption.size() : first_comma;
  const std::vector<Token> head = tokenize(caption.substr(0, head_end), 0);

  std::vector<Attribute> colors;
  std::vector<Attribute> sizes;
  std::optional<Attribute> category;
  for (std::size_t i = 0; i < head.size(); ++i) {
    const Token& t = head[i];
    if (color_lexicon().count(t.lower)) {
      colors.push_back({"color", span_of(t.begin, t.begin + t.lower.size()), {}, confidence()});
      continue;
    }
    if (size_lexicon().count(t.lower)) {
      sizes.push_back({"size", span_of(t.begin, t.begin + t.lower.size()), {}, confidence()});
      continue;
    }
    if (category || function_words().count(t.lower) || t.lower.empty()) continue;
    std::size_t j = i;
    while (j + 1 < head.size() && !function_words().count(head[j + 1].lower) && !color_lexicon().count(head[j + 1].lower) &&
           !size_lexicon().count(head[j + 1].lower) && !head[j + 1].lower.empty())
      ++j;
    // trailing punctuation stripped from the token stays out of the span
    category = Attribute{"category", span_of(head[i].begin, head[j].begin + head[j].lower.size()), {}, confidence()};
    result.primary_target = category->description;
    i = j;
  }

  if (category) result.attributes.push_back(*category);
  for (auto& a : colors) result.attributes.push_back(std::move(a));
  for (auto& a : sizes) result.attributes.push_back(std::move(a));

  // Every clause after a comma is a spatial relation.
  std::size_t pos = first_comma;
  while (pos != std::string_view::npos) {
    const std::size_t next = caption.find(',', pos + 1);
    const std::size_t end = next == std::string_view::npos ? caption.size() : next;
    std::size_t b = pos + 1;
    std::size_t e = end;
    while (b < e && std::isspace(static_cast<unsigned char>(caption[b]))) ++b;
    while (e > b && (std::isspace(static_cast<unsigned char>(caption[e - 1])) || caption[e - 1] == '.')) --e;
    if (e > b) result.attributes.push_back({"spatial_relation", span_of(b, e), {}, confidence()});
    pos = next;
  }

  if (result.attributes.empty()) {
    const std::string whole = trim(caption);
    result.attributes.push_back({"other", whole, {}, confidence()});
    result.primary_target = whole;
  }
  for (auto& a : result.attributes) a.evidence = {a.description};
  result.analysis = "rule-based mock decomposition";
  return result;
}

json to_json(const ValidationReport& report) {
  json violations = json::array();
  for (const auto& v : report.violations) {
    json entry = {{"rule_id", v.rule_id},
                  {"message", v.message},
                  {"severity", v.severity == Severity::hard ? "hard" : "soft"}};
    if (v.attribute) entry["attribute"] = *v.attribute;
    violations.push_back(entry);
  }
  return {{"verdict", report.accepted() ? "accept" : "reject"},
          {"violations", violations},
          {"attempt_count", report.attempt_count}};
}

json to_json(const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  return {{"model", request.model}, {"temperature", request.temperature}, {"messages", messages}};
}

std::string MockLlmClient::complete(const ChatRequest& request) {
  return to_json(mock_decompose(request.caption, seed_)).dump();
}

std::string first_choice_content(std::string_view body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw TransportError(std::string("response is not JSON: ") + e.what());
  }
  if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
    throw TransportError("response has no choices");
  const json& message = j["choices"][0].value("message", json::object());
  if (!message.contains("content") || !message["content"].is_string())
    throw TransportError("first choice has no message content");
  return message["content"].get<std::string>();
}

DecomposeOutcome decompose(LlmClient& client, std::string_view caption, const DecomposeOptions& options) {
  ChatRequest request{options.model, 0.0, {{"user", build_prompt(caption)}}, std::string(caption)};
  DecomposeOutcome outcome;
  outcome.transcript = json::array();

  const std::size_t max_attempts = options.retries + 1;
  for (std::size_t attempt = 1; attempt <= max_attempts; ++attempt) {
    if (attempt > 1 && options.backoff_base_ms > 0)
      std::this_thread::sleep_for(std::chrono::milliseconds(options.backoff_base_ms << (attempt - 2)));
    json entry = {{"attempt", attempt}, {"request", to_json(request)}};
    try {
      const std::string reply = client.complete(request);
      entry["response"] = reply;
      DecompositionResult parsed = parse_response(reply);
      ValidationReport report = validate(caption, parsed, options.a_max);
      report.attempt_count = attempt;
      entry["validation"] = to_json(report);
      outcome.transcript.push_back(entry);
      outcome.report = report;
      if (report.accepted()) {
        outcome.result = truncate_attributes(std::move(parsed), options.a_max);
        outcome.error.reset();
        return outcome;
      }
      outcome.error = "validation rejected the reply";
    } catch (const TransportError& e) {
      entry["error"] = std::string("transport: ") + e.what();
      outcome.transcript.push_back(entry);
      outcome.error = entry["error"];
    } catch (const ParseError& e) {
      entry["error"] = std::string("parse: ") + e.what();
      outcome.transcript.push_back(entry);
      outcome.error = entry["error"];
    }
  }
  outcome.report.verdict = Verdict::reject;
  outcome.report.attempt_count = max_attempts;
  if (!outcome.report.has_rule("all-retries-rejected"))
    outcome.report.violations.push_back(
        {"all-retries-rejected", "no accepted reply after " + std::to_string(max_attempts) + " attempts", Severity::hard,
         std::nullopt});
  return outcome;
}

std::map<std::string, DecomposeOutcome> decompose_all(LlmClient& client, std::span<const CaptionJob> jobs,
                                                      const DecomposeOptions& options, std::size_t concurrency) {
  std::map<std::string, DecomposeOutcome> results;
  std::mutex results_mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      DecomposeOutcome outcome = decompose(client, jobs[i].caption, options);
      std::lock_guard lock(results_mutex);
      results.emplace(jobs[i].id, std::move(outcome));
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(concurrency, 1, std::max<std::size_t>(jobs.size(), 1));
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
  }
  return results;
}

}  // namespace ota
