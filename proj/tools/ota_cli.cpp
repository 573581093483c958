// ota: data reformulation, attribute decomposition, supervision building,
// gradient checks, toy training and evaluation.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "ota/align_head.hpp"
#include "ota/attr_decomp.hpp"
#include "ota/config.hpp"
#include "ota/data_model.hpp"
#include "ota/errors.hpp"
#include "ota/gradcheck.hpp"
#include "ota/inference.hpp"
#include "ota/metrics.hpp"
#include "ota/supervision.hpp"
#include "ota/text.hpp"
#include "ota/toy_train.hpp"

namespace {

using nlohmann::json;

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kInputError = 2;

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ota::InputError("cannot write " + path);
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ota::FileNotFound(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_json(const std::string& path, const json& j) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

void setup_logging(const std::string& level) {
  auto logger = spdlog::stderr_color_mt("ota");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(level));
}

void report_load(const std::string& path, const ota::LoadReport& r) {
  spdlog::info("{}: loaded {}, skipped {}", path, r.loaded, r.skipped);
  for (const auto& e : r.errors) spdlog::warn("{}: {}", path, e);
}

// aggregate

struct AggregateArgs {
  std::string input;
  std::string output;
  bool naive = false;
  bool strict = false;
};

int cmd_aggregate(const AggregateArgs& a) {
  ota::LoadReport report;
  const auto triplets = ota::load_triplets_jsonl(a.input, {a.strict}, &report);
  report_load(a.input, report);
  std::vector<ota::AggregatedSample> samples;
  if (a.naive) {
    for (const auto& t : triplets) samples.push_back(ota::naive_reformulate(t));
  } else {
    samples = ota::aggregate_image_level(triplets);
  }
  ota::save_samples_jsonl(a.output, samples);
  spdlog::info("{} triplets -> {} samples", triplets.size(), samples.size());
  return kOk;
}

// decompose

struct DecomposeArgs {
  std::string input;
  std::string output;
  bool mock = false;
  std::string endpoint;
  std::string model;
  std::string llm_config;
  std::size_t concurrency = 4;
  std::size_t retries = 2;
  std::uint64_t seed = 0;
  std::size_t a_max = 10;
  std::string transcripts;
  std::string rejects;
  bool resume = false;
  bool strict = false;
};

int cmd_decompose(const DecomposeArgs& a, const ota::AppConfig& cfg) {
  ota::LoadReport load;
  auto samples = ota::load_samples_jsonl(a.input, {a.strict}, &load);
  report_load(a.input, load);

  std::unique_ptr<ota::LlmClient> client;
  if (a.mock) {
    client = std::make_unique<ota::MockLlmClient>(a.seed);
  } else {
    ota::LlmConfig llm = a.llm_config.empty() ? cfg.llm : ota::load_llm_config(a.llm_config);
    if (!a.endpoint.empty()) llm.endpoint = a.endpoint;
    if (!a.model.empty()) llm.model = a.model;
    if (const char* v = std::getenv("OTA_LLM_ENDPOINT")) llm.endpoint = v;
    if (const char* v = std::getenv("OTA_LLM_MODEL")) llm.model = v;
    if (const char* v = std::getenv("OTA_LLM_KEY")) llm.api_key = v;
    if (llm.endpoint.empty()) throw ota::InputError("decompose: no endpoint (use --mock or --endpoint)");
    client = std::make_unique<ota::HttpChatClient>(llm);
  }

  ota::DecomposeOptions options;
  options.model = a.mock ? "mock" : (a.model.empty() ? cfg.llm.model : a.model);
  options.retries = a.retries;
  options.seed = a.seed;
  options.a_max = a.a_max;

  std::vector<ota::CaptionJob> jobs;
  std::set<std::string> queued;
  std::size_t resumed = 0;
  for (auto& s : samples)
    for (auto& q : s.queries) {
      if (q.kind == ota::QueryKind::category) {
        if (q.attributes.empty()) q.attributes = {ota::self_attribute(q.text)};
        continue;
      }
      if (a.resume && !q.attributes.empty()) {
        ++resumed;
        continue;
      }
      if (queued.insert(q.text).second) jobs.push_back({q.text, q.text});
    }
  spdlog::info("decomposing {} captions ({} already enriched)", jobs.size(), resumed);

  const auto outcomes = ota::decompose_all(*client, jobs, options, a.concurrency);

  std::optional<std::ofstream> transcripts, rejects;
  if (!a.transcripts.empty()) transcripts = open_out(a.transcripts);
  if (!a.rejects.empty()) rejects = open_out(a.rejects);
  std::size_t rejected = 0;
  for (const auto& job : jobs) {
    const auto& o = outcomes.at(job.id);
    if (transcripts) *transcripts << json{{"caption", job.caption}, {"attempts", o.transcript}}.dump() << '\n';
    if (!o.result || !o.report.accepted()) {
      ++rejected;
      if (rejects) {
        json r{{"caption", job.caption}, {"report", ota::to_json(o.report)}};
        if (o.error) r["error"] = *o.error;
        *rejects << r.dump() << '\n';
      }
    }
  }

  for (auto& s : samples)
    for (auto& q : s.queries) {
      const auto it = outcomes.find(q.text);
      if (q.kind != ota::QueryKind::expression || it == outcomes.end()) continue;
      if (a.resume && !q.attributes.empty()) continue;
      if (it->second.result && it->second.report.accepted()) q.attributes = it->second.result->attributes;
    }
  ota::save_samples_jsonl(a.output, samples);
  spdlog::info("{} captions rejected", rejected);
  return kOk;
}

// validate-attrs

struct ValidateArgs {
  std::string caption;
  std::string response;
  std::string input;
  std::size_t a_max = 10;
  std::string output;
};

int cmd_validate_attrs(const ValidateArgs& a) {
  if (!a.input.empty()) {
    const auto samples = ota::load_samples_jsonl(a.input);
    json out = json::array();
    bool all_ok = true;
    for (const auto& s : samples)
      for (const auto& q : s.queries) {
        if (q.kind != ota::QueryKind::expression) continue;
        const auto report = ota::validate(q.text, {q.text, q.attributes, ""}, a.a_max);
        all_ok = all_ok && report.accepted();
        out.push_back({{"image_id", s.image_id}, {"text", q.text}, {"report", ota::to_json(report)}});
      }
    write_json(a.output, out);
    return all_ok ? kOk : kCheckFailed;
  }
  if (a.caption.empty() || a.response.empty())
    throw ota::InputError("validate-attrs: give --input, or --caption with --response");
  const auto result = ota::parse_response(read_file(a.response));
  const auto report = ota::validate(a.caption, result, a.a_max);
  write_json(a.output, ota::to_json(report));
  return report.accepted() ? kOk : kCheckFailed;
}

// build-supervision

struct SupervisionArgs {
  std::string input;
  std::string output;
  std::string task = "full";
  std::string vocab;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> q_max;
  std::optional<std::size_t> a_max;
  bool verify = false;
};

int cmd_build_supervision(const SupervisionArgs& a, const ota::AppConfig& app) {
  ota::SamplerConfig cfg = app.sampler;
  if (a.seed) cfg.seed = *a.seed;
  if (a.q_max) cfg.q_max = *a.q_max;
  if (a.a_max) cfg.a_max = *a.a_max;
  ota::validate_sampler_config(cfg);

  std::vector<std::string> vocabulary;
  if (a.task == "ovad") {
    if (a.vocab.empty()) throw ota::InputError("build-supervision: ovad needs --vocab");
    std::istringstream lines(read_file(a.vocab));
    for (std::string line; std::getline(lines, line);)
      if (!ota::trim(line).empty()) vocabulary.push_back(ota::trim(line));
  }

  std::size_t skipped = 0;
  const auto all = ota::load_samples_jsonl(a.input);
  const auto samples = ota::usable_samples(all, &skipped);
  if (skipped) spdlog::warn("skipped {} samples without queries", skipped);

  auto out = open_out(a.output);
  ota::Rng rng(cfg.seed);
  std::size_t violations = 0;
  for (const auto& s : samples) {
    ota::SupervisionBatch b;
    if (a.task == "full") {
      b = ota::full_batch(s, cfg.q_max, cfg.a_max);
    } else if (a.task == "rsvg") {
      b = ota::sample_rsvg(s, cfg, rng);
    } else if (a.task == "ovad") {
      b = ota::sample_ovad(s, vocabulary, cfg, rng);
    } else {
      throw ota::InputError("build-supervision: unknown task " + a.task);
    }
    if (a.verify)
      for (const auto& msg : ota::verify_consistency(b.correspondence, b.text)) {
        ++violations;
        spdlog::error("{}: {}", s.image_id, msg);
      }
    out << json{{"image_id", s.image_id}, {"text", ota::to_json(b.text)}, {"correspondence", ota::to_json(b.correspondence)}}
               .dump()
        << '\n';
  }
  spdlog::info("{} batches written", samples.size());
  return violations ? kCheckFailed : kOk;
}

// gradcheck

struct GradcheckArgs {
  ota::GradCheckOptions options;
  std::string output;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  const auto report = ota::gradcheck(a.options);
  write_json(a.output, ota::to_json(report));
  if (!report.passed) spdlog::error("gradient check failed");
  return report.passed ? kOk : kCheckFailed;
}

// train-toy

struct TrainArgs {
  std::optional<std::size_t> steps;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> world_seed;
  bool ablate_attr = false;
  std::string history;
  std::string recovery;
  std::string checkpoint;
};

int cmd_train_toy(const TrainArgs& a, const ota::AppConfig& app) {
  ota::WorldConfig wc = app.world;
  ota::TrainConfig tc = ota::train_config(app);
  if (a.steps) tc.steps = *a.steps;
  if (a.lr) tc.lr = *a.lr;
  if (a.seed) tc.seed = *a.seed;
  if (a.world_seed) wc.seed = *a.world_seed;
  if (a.ablate_attr) tc.weights.attr = 0.0;

  const ota::ToyWorld world = ota::generate_world(wc);
  const auto before = ota::full_objective(world, ota::initial_state(world, tc), tc);
  ota::TrainResult result;
  try {
    result = ota::train(world, tc);
  } catch (const ota::TrainingDiverged& e) {
    spdlog::error("{}", e.what());
    return kCheckFailed;
  }
  const auto after = ota::full_objective(world, result.state, tc);
  const auto recovery = ota::evaluate_recovery(world, result.state, tc);

  if (!a.history.empty()) {
    auto out = open_out(a.history);
    ota::write_history_csv(out, result.history);
  }
  if (!a.checkpoint.empty()) ota::save_head(a.checkpoint, result.state.params);
  json report = ota::to_json(recovery);
  report["initial_total"] = before.total;
  report["final_total"] = after.total;
  report["loss_ratio"] = before.total > 0 ? after.total / before.total : 0.0;
  report["steps"] = tc.steps;
  write_json(a.recovery, report);
  spdlog::info("loss {:.6f} -> {:.6f}; agreement query {:.3f} attr {:.3f}", before.total, after.total,
               recovery.query.balanced(), recovery.attr.balanced());
  return kOk;
}

// eval / report

struct EvalArgs {
  std::string predictions;
  std::string gt;
  std::vector<double> taus = ota::kDefaultTaus;
  std::string json_out;
  std::string csv_out;
};

int cmd_eval(const EvalArgs& a) {
  const auto samples = ota::load_samples_jsonl(a.gt);
  const auto preds = ota::load_jsonl<ota::ImagePredictions>(a.predictions, {}, nullptr, ota::predictions_from_json);
  const auto input = ota::join_predictions(samples, preds);
  const auto report = ota::evaluate(input, a.taus);
  std::cout << ota::format_table(report);
  if (!a.json_out.empty()) write_json(a.json_out, ota::to_json(report));
  if (!a.csv_out.empty()) {
    auto out = open_out(a.csv_out);
    ota::write_expression_csv(out, input.expressions, a.taus);
  }
  if (report.zero_attribute_expressions)
    spdlog::warn("{} expressions have no attributes and count as not aligned", report.zero_attribute_expressions);
  return kOk;
}

int cmd_report(const std::string& input, const std::string& format) {
  json j;
  try {
    j = json::parse(read_file(input));
  } catch (const json::parse_error& e) {
    throw ota::ParseError(0, input + ": " + e.what());
  }
  const auto report = ota::metric_report_from_json(j);
  if (format == "json") {
    std::cout << ota::to_json(report).dump(2) << '\n';
  } else {
    std::cout << ota::format_table(report);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Open-vocabulary aerial detection and grounding toolkit"};
  app.require_subcommand(1);

  std::optional<std::string> config_path;
  std::optional<std::string> log_level;
  bool lenient_config = false;
  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");
  app.add_flag("--lenient-config", lenient_config, "Ignore unknown config keys");

  AggregateArgs agg;
  auto* c_agg = app.add_subcommand("aggregate", "Triplets JSONL -> per-image samples JSONL");
  c_agg->add_option("-i,--input", agg.input, "Triplets JSONL")->required();
  c_agg->add_option("-o,--output", agg.output, "Samples JSONL")->required();
  c_agg->add_flag("--naive", agg.naive, "One sample per triplet");
  c_agg->add_flag("--strict", agg.strict, "Fail on the first bad line");

  DecomposeArgs dec;
  auto* c_dec = app.add_subcommand("decompose", "Attach verbatim attributes to expression queries");
  c_dec->add_option("-i,--input", dec.input)->required();
  c_dec->add_option("-o,--output", dec.output)->required();
  auto* mock_flag = c_dec->add_flag("--mock", dec.mock, "Offline rule-based decomposition");
  c_dec->add_option("--endpoint", dec.endpoint, "Chat-completions URL")->excludes(mock_flag);
  c_dec->add_option("--model", dec.model);
  c_dec->add_option("--llm-config", dec.llm_config, "JSON with endpoint, model, api_key");
  c_dec->add_option("--concurrency", dec.concurrency)->check(CLI::PositiveNumber);
  c_dec->add_option("--retries", dec.retries);
  c_dec->add_option("--seed", dec.seed);
  c_dec->add_option("--a-max", dec.a_max)->check(CLI::PositiveNumber);
  c_dec->add_option("--transcripts", dec.transcripts, "JSONL of every attempt");
  c_dec->add_option("--rejects", dec.rejects, "JSONL of rejected captions");
  c_dec->add_flag("--resume", dec.resume, "Skip queries that already have attributes");
  c_dec->add_flag("--strict", dec.strict);

  ValidateArgs val;
  auto* c_val = app.add_subcommand("validate-attrs", "Check attributes against their caption");
  c_val->add_option("--caption", val.caption);
  c_val->add_option("--response", val.response, "File with a raw model reply");
  c_val->add_option("-i,--input", val.input, "Samples JSONL with attributes");
  c_val->add_option("--a-max", val.a_max);
  c_val->add_option("-o,--output", val.output, "Report JSON (default stdout)");

  SupervisionArgs sup;
  auto* c_sup = app.add_subcommand("build-supervision", "Samples JSONL -> text batches and correspondence matrices");
  c_sup->add_option("-i,--input", sup.input)->required();
  c_sup->add_option("-o,--output", sup.output)->required();
  c_sup->add_option("--task", sup.task)->check(CLI::IsMember({"full", "rsvg", "ovad"}));
  c_sup->add_option("--vocab", sup.vocab, "Category vocabulary, one per line");
  c_sup->add_option("--seed", sup.seed);
  c_sup->add_option("--q-max", sup.q_max);
  c_sup->add_option("--a-max", sup.a_max);
  c_sup->add_flag("--verify", sup.verify, "Exit 1 on any matrix invariant violation");

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Analytic vs finite-difference gradients of the head and loss");
  c_gc->add_option("--trials", gc.options.trials);
  c_gc->add_option("--seed", gc.options.seed);
  c_gc->add_option("--epsilon", gc.options.epsilon);
  c_gc->add_option("--tolerance", gc.options.tolerance);
  c_gc->add_flag("--inject-fault", gc.options.inject_fault);
  c_gc->add_option("-o,--output", gc.output, "Report JSON (default stdout)");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train-toy", "Train on a planted synthetic world and report recovery");
  c_tr->add_option("--steps", tr.steps);
  c_tr->add_option("--lr", tr.lr);
  c_tr->add_option("--seed", tr.seed);
  c_tr->add_option("--world-seed", tr.world_seed);
  c_tr->add_flag("--ablate-attr", tr.ablate_attr, "Set the attribute loss weight to 0");
  c_tr->add_option("--history", tr.history, "History CSV");
  c_tr->add_option("--recovery", tr.recovery, "Recovery report JSON (default stdout)");
  c_tr->add_option("--checkpoint", tr.checkpoint, "Head checkpoint");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Score predictions against ground truth");
  c_ev->add_option("-p,--predictions", ev.predictions)->required();
  c_ev->add_option("-g,--gt", ev.gt, "Samples JSONL")->required();
  c_ev->add_option("--taus", ev.taus)->delimiter(',');
  c_ev->add_option("--json", ev.json_out);
  c_ev->add_option("--csv", ev.csv_out, "Per-expression verdicts");

  std::string rep_input, rep_format = "table";
  auto* c_rep = app.add_subcommand("report", "Print a saved metric report");
  c_rep->add_option("-i,--input", rep_input)->required();
  c_rep->add_option("--format", rep_format)->check(CLI::IsMember({"table", "json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInputError;
  }

  try {
    ota::AppConfig cfg = ota::load_config(config_path ? std::optional<std::filesystem::path>(*config_path) : std::nullopt,
                                          !lenient_config);
    if (log_level) cfg.log_level = *log_level;
    ota::apply_env_overrides(cfg);
    ota::validate_config(cfg);
    setup_logging(cfg.log_level);

    if (*c_agg) return cmd_aggregate(agg);
    if (*c_dec) return cmd_decompose(dec, cfg);
    if (*c_val) return cmd_validate_attrs(val);
    if (*c_sup) return cmd_build_supervision(sup, cfg);
    if (*c_gc) return cmd_gradcheck(gc);
    if (*c_tr) return cmd_train_toy(tr, cfg);
    if (*c_ev) return cmd_eval(ev);
    if (*c_rep) return cmd_report(rep_input, rep_format);
  } catch (const ota::InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kCheckFailed;
  }
  return kOk;
}
