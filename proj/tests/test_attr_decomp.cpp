#include <doctest.h>

#include <atomic>
#include <fstream>
#include <iterator>
#include <set>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "fuzz.hpp"
#include "ota/attr_decomp.hpp"
#include "ota/text.hpp"

using namespace ota;

namespace {

std::string read_data(const std::string& name) {
  std::ifstream in(std::string(OTA_TEST_DATA_DIR) + "/" + name, std::ios::binary);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t count(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) ++n;
  return n;
}

// Replies from a fixed script, one per call.
class ScriptedClient : public LlmClient {
 public:
  explicit ScriptedClient(std::vector<std::string> replies) : replies_(std::move(replies)) {}
  std::string complete(const ChatRequest&) override {
    const auto k = calls++;
    if (replies_[k].empty()) throw TransportError("connection reset");
    return replies_[k];
  }
  std::atomic<std::size_t> calls{0};

 private:
  std::vector<std::string> replies_;
};

}  // namespace

TEST_CASE("prompt contains the caption once and all seven rules") {
  const std::string caption = read_data("van_caption.txt");
  const std::string prompt = build_prompt(caption);
  CHECK(count(prompt, caption) == 2);  // the caption itself, plus the worked example's copy
  const std::string tmpl = prompt_template();
  CHECK(count(tmpl, caption) == 1);
  for (int rule = 1; rule <= 7; ++rule) CHECK(prompt.find("\n" + std::to_string(rule) + ". ") != std::string::npos);
  CHECK(prompt.find("Parse completely") != std::string::npos);
  CHECK(prompt.find("{caption}") == std::string::npos);
}

TEST_CASE("prompt interpolation escapes quotes and leaves the template intact") {
  const std::string caption = "the \"red\" car";
  const std::string prompt = build_prompt(caption);
  CHECK(prompt.find("\"the \\\"red\\\" car\"") != std::string::npos);
  const std::string tmpl = prompt_template();
  const auto at = tmpl.find("{caption}");
  REQUIRE(at != std::string::npos);
  CHECK(prompt.substr(0, at) == tmpl.substr(0, at));
  const std::string tail = tmpl.substr(at + 9);
  CHECK(prompt.substr(prompt.size() - tail.size()) == tail);
}

TEST_CASE("empty caption is a precondition error") {
  CHECK_THROWS_AS(build_prompt(""), std::invalid_argument);
  CHECK_THROWS_AS(build_prompt("   "), std::invalid_argument);
}

TEST_CASE("appendix example parses and validates") {
  const std::string caption = read_data("van_caption.txt");
  const auto r = parse_response(read_data("van_response.json"));
  CHECK(r.primary_target == "van");
  REQUIRE(r.attributes.size() == 4);
  CHECK(r.attributes[0].aspect == "category");
  CHECK(r.attributes[1].aspect == "color");
  CHECK(r.attributes[2].aspect == "state");
  CHECK(r.attributes[3].aspect == "spatial_relation");
  CHECK(r.attributes[2].description == "is driving the left side onto the straight road");
  const auto report = validate(caption, r);
  CHECK(report.accepted());
  CHECK(report.violations.empty());
  for (const auto& a : r.attributes) CHECK(contains_verbatim(caption, a.description));
}

TEST_CASE("fenced replies parse like bare ones") {
  const std::string raw = read_data("van_response.json");
  CHECK(parse_response("```json\n" + raw + "\n```") == parse_response(raw));
  CHECK(parse_response("```json " + raw + " ```") == parse_response(raw));
  CHECK(parse_response("```\n" + raw + "```\n") == parse_response(raw));
}

TEST_CASE("parse errors name the missing field") {
  try {
    parse_response(R"({"primary_target":"van","analysis":""})");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("attributes") != std::string::npos);
  }
  try {
    parse_response(R"({"attributes":[],"analysis":""})");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("primary_target") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_response("{not json"), ParseError);
  CHECK_THROWS_AS(parse_response(R"({"primary_target":"v","attributes":[{"aspect":"color","description":"v","confidence":"high"}]})"),
                  ParseError);
}

TEST_CASE("serialize then parse is identity") {
  const auto r = parse_response(read_data("van_response.json"));
  CHECK(parse_response(to_json(r).dump()) == r);
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = mock_decompose(fuzz::caption(rng), static_cast<std::uint64_t>(trial));
    CHECK(parse_response(to_json(m).dump()) == m);
  }
}

TEST_CASE("paraphrased description is rejected") {
  const std::string caption = read_data("van_caption.txt");
  auto r = parse_response(read_data("van_response.json"));
  r.attributes[1].description = "dark";
  const auto report = validate(caption, r);
  CHECK_FALSE(report.accepted());
  CHECK(report.has_rule("verbatim-description"));
  CHECK_FALSE(report.attribute_flags[1].verbatim);

  DecompositionResult dark{"van", {{"category", "dark van", {}, 1.0}}, ""};
  CHECK(validate("A black van on the road", dark).has_rule("verbatim-description"));
}

TEST_CASE("other hard and soft rules") {
  const std::string caption = "a small red car near the bridge";
  DecompositionResult r{"car", {{"category", "car", {"a small red car"}, 1.0}}, ""};
  CHECK(validate(caption, r).accepted());

  auto bad_conf = r;
  bad_conf.attributes[0].confidence = 1.5;
  CHECK(validate(caption, bad_conf).has_rule("confidence-range"));
  CHECK_FALSE(validate(caption, bad_conf).accepted());

  auto bad_evidence = r;
  bad_evidence.attributes[0].evidence = {"a tiny car"};
  CHECK(validate(caption, bad_evidence).has_rule("verbatim-evidence"));

  DecompositionResult empty{"car", {}, ""};
  CHECK_FALSE(validate(caption, empty).accepted());
  CHECK(validate(caption, empty).has_rule("non-empty"));

  auto odd = r;
  odd.attributes.push_back({"vibe", "red", {}, 0.5});
  const auto odd_report = validate(caption, odd);
  CHECK(odd_report.accepted());
  CHECK(odd_report.has_rule("unknown-aspect"));
  CHECK(odd.attributes[1].aspect == "vibe");

  DecompositionResult no_cat{"car", {{"color", "red", {}, 1.0}}, ""};
  CHECK(validate(caption, no_cat).accepted());
  CHECK(validate(caption, no_cat).has_rule("missing-category"));
}

TEST_CASE("twelve attributes accept with an over-limit flag and truncate to ten") {
  std::string caption = "w0";
  for (int k = 1; k < 12; ++k) caption += " w" + std::to_string(k);
  DecompositionResult r{"w0", {}, ""};
  for (int k = 0; k < 12; ++k) r.attributes.push_back({k == 5 ? "category" : "other", "w" + std::to_string(k), {}, 1.0});
  const auto report = validate(caption, r);
  CHECK(report.accepted());
  CHECK(report.has_rule("over-limit"));

  const auto t = truncate_attributes(r, 10);
  REQUIRE(t.attributes.size() == 10);
  CHECK(t.attributes[0].aspect == "category");
  CHECK(t.attributes[1].description == "w0");
  CHECK(truncate_attributes(DecompositionResult{"x", {r.attributes[0], r.attributes[1], r.attributes[2]}, ""}, 10)
            .attributes.size() == 3);
  DecompositionResult none{"x", {}, ""};
  CHECK(truncate_attributes(none, 10).attributes.empty());
  CHECK(validate("x", none).has_rule("non-empty"));
}

TEST_CASE("nfc-equivalent text counts as verbatim") {
  DecompositionResult r{"cafe", {{"category", "cafe\xCC\x81", {}, 1.0}}, ""};
  CHECK(validate("the caf\xC3\xA9 roof", r).accepted());
}

TEST_CASE("mock decomposition") {
  const auto r = mock_decompose("a green taxi on the left", 1);
  std::set<std::string> aspects;
  bool has_green = false;
  for (const auto& a : r.attributes) {
    aspects.insert(a.aspect);
    has_green = has_green || (a.aspect == "color" && a.description == "green");
  }
  CHECK(aspects.contains("category"));
  CHECK(has_green);
  CHECK(validate("a green taxi on the left", r).accepted());

  const auto plain = mock_decompose("the ship near the harbor", 1);
  for (const auto& a : plain.attributes) CHECK(a.aspect != "color");

  CHECK(mock_decompose("a green taxi on the left", 9) == mock_decompose("a green taxi on the left", 9));
}

TEST_CASE("mock decomposition always validates on fuzzed captions") {
  Rng rng(2024);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::string caption = fuzz::caption(rng);
    const auto r = mock_decompose(caption, static_cast<std::uint64_t>(trial));
    const auto report = validate(caption, r);
    CHECK_MESSAGE(report.accepted(), caption);
  }
}

TEST_CASE("decompose with the mock client is deterministic") {
  MockLlmClient client(3);
  DecomposeOptions options;
  options.seed = 3;
  const auto a = decompose(client, "a white plane on the apron", options);
  const auto b = decompose(client, "a white plane on the apron", options);
  REQUIRE(a.result);
  CHECK(a.result == b.result);
  CHECK(a.report.accepted());
  CHECK(a.report.attempt_count == 1);
}

TEST_CASE("decompose retries through garbage and transport errors") {
  const std::string caption = read_data("van_caption.txt");
  ScriptedClient client({"garbage", "", read_data("van_response.json")});
  DecomposeOptions options;
  options.retries = 2;
  options.backoff_base_ms = 1;
  const auto out = decompose(client, caption, options);
  REQUIRE(out.result);
  CHECK(out.report.accepted());
  CHECK(out.report.attempt_count == 3);
  CHECK(out.transcript.size() == 3);
  CHECK(client.calls == 3);
}

TEST_CASE("decompose reports all-retries-rejected") {
  ScriptedClient client({"nope", "nope", "nope"});
  DecomposeOptions options;
  options.retries = 2;
  options.backoff_base_ms = 0;
  const auto out = decompose(client, "a car", options);
  CHECK_FALSE(out.result);
  CHECK_FALSE(out.report.accepted());
  CHECK(out.report.has_rule("all-retries-rejected"));
  CHECK(out.report.attempt_count == 3);
  CHECK(out.transcript.size() == 3);
}

TEST_CASE("decompose_all keys results by id under concurrency") {
  MockLlmClient client(0);
  std::vector<CaptionJob> jobs;
  Rng rng(8);
  for (int k = 0; k < 40; ++k) jobs.push_back({"job" + std::to_string(k), fuzz::caption(rng)});
  DecomposeOptions options;
  const auto parallel = decompose_all(client, jobs, options, 8);
  const auto serial = decompose_all(client, jobs, options, 1);
  REQUIRE(parallel.size() == jobs.size());
  for (const auto& job : jobs) CHECK(parallel.at(job.id).result == serial.at(job.id).result);
}

TEST_CASE("request schema") {
  const ChatRequest req{"m", 0.0, {{"user", "hello"}}, "caption"};
  const auto j = to_json(req);
  CHECK(j.at("model") == "m");
  CHECK(j.at("temperature") == 0.0);
  CHECK(j.at("messages")[0].at("role") == "user");
  CHECK(j.at("messages")[0].at("content") == "hello");
  CHECK_FALSE(j.contains("caption"));
  CHECK(first_choice_content(R"({"choices":[{"message":{"role":"assistant","content":"hi"}}]})") == "hi");
  CHECK_THROWS(first_choice_content(R"({"choices":[]})"));
}

TEST_CASE("http client against a local chat endpoint") {
  const std::string reply = read_data("van_response.json");
  httplib::Server server;
  std::string seen_auth, seen_model;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    seen_model = nlohmann::json::parse(req.body).at("model");
    nlohmann::json body = {{"choices", {{{"message", {{"role", "assistant"}, {"content", reply}}}}}}};
    res.set_content(body.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  HttpChatClient client({"http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions", "test-model", "secret", 10});
  DecomposeOptions options;
  options.model = "test-model";
  const auto out = decompose(client, read_data("van_caption.txt"), options);
  server.stop();
  t.join();

  REQUIRE(out.result);
  CHECK(out.report.accepted());
  CHECK(out.result->attributes.size() == 4);
  CHECK(seen_auth == "Bearer secret");
  CHECK(seen_model == "test-model");
}

TEST_CASE("http client maps failures to transport errors") {
  HttpChatClient client({"http://127.0.0.1:1/v1/chat/completions", "m", "", 1});
  CHECK_THROWS_AS(client.complete({"m", 0.0, {{"user", "x"}}, "x"}), TransportError);
}

TEST_CASE("llm config from file and environment") {
  const auto path = std::filesystem::temp_directory_path() / "ota-llm-config-test.json";
  {
    std::ofstream out(path);
    out << R"({"endpoint":"http://a/v1/chat/completions","model":"m1","api_key":"k1"})";
  }
  ::unsetenv("OTA_LLM_ENDPOINT");
  ::unsetenv("OTA_LLM_KEY");
  ::setenv("OTA_LLM_MODEL", "m2", 1);
  const auto cfg = load_llm_config(path.string());
  ::unsetenv("OTA_LLM_MODEL");
  std::filesystem::remove(path);
  CHECK(cfg.endpoint == "http://a/v1/chat/completions");
  CHECK(cfg.model == "m2");
  CHECK(cfg.api_key == "k1");
}
