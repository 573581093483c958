// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Every check uses its own oracle rather than the code under test.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <set>
#include <sstream>
#include <string>

#include "fuzz.hpp"
#include "oracles.hpp"
#include "ota/align_head.hpp"
#include "ota/attr_decomp.hpp"
#include "ota/gradcheck.hpp"
#include "ota/losses.hpp"
#include "ota/metrics.hpp"
#include "ota/supervision.hpp"
#include "ota/text.hpp"
#include "ota/toy_train.hpp"

using namespace ota;
using Eigen::MatrixXd;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string read_data(const std::string& name) {
  std::ifstream in(std::string(OTA_TEST_DATA_DIR) + "/" + name, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---- 1 -------------------------------------------------------------------

Outcome gradient_fidelity() {
  Outcome o;
  const auto start = std::chrono::steady_clock::now();
  GradCheckOptions opts;
  opts.trials = 64;
  opts.epsilon = 1e-5;
  opts.tolerance = 1e-5;
  const auto report = gradcheck(opts);
  const double t = seconds_since(start);
  double worst = 0.0;
  for (const auto& [group, err] : report.max_rel_error) worst = std::max(worst, err);
  o.require(report.trials == 64, "trial count");
  o.require(worst < 1e-5, "max relative error " + fmt("%.3g", worst));
  o.require(t < 10.0, "runtime " + fmt("%.2f", t) + " s");
  if (o.pass) o.detail = "max rel err " + fmt("%.2e", worst) + " over 64 trials";
  return o;
}

// ---- 2 -------------------------------------------------------------------

Outcome mal_identities() {
  Outcome o;
  const MalConfig def;
  o.require(std::abs(mal(1.0, 1.0, 1, def)) <= 1e-12, "mal(1,1,1) = " + fmt("%.3g", mal(1.0, 1.0, 1, def)));
  for (double q : {0.0, 0.3, 0.7, 1.0})
    o.require(std::abs(mal(0.0, q, 0, def)) <= 1e-12, "mal(0,q,0) nonzero");
  for (double gamma : {0.0, 1.5, 2.0}) {
    const double v = mal(0.5, 1.0, 1, MalConfig{gamma, 1.0});
    o.require(std::abs(v - std::log(2.0)) <= 1e-12, "mal(0.5,1,1) at gamma " + fmt("%.1f", gamma) + " = " + fmt("%.17g", v));
  }
  if (o.pass) o.detail = "all identities within 1e-12";
  return o;
}

// ---- 3 -------------------------------------------------------------------

Eigen::MatrixXi saturated_product(const BinaryMatrix& m_q, const BinaryMatrix& m_map) {
  Eigen::MatrixXi out = Eigen::MatrixXi::Zero(m_q.rows(), m_map.cols());
  for (Eigen::Index i = 0; i < m_q.rows(); ++i)
    for (Eigen::Index j = 0; j < m_q.cols(); ++j)
      if (m_q(i, j))
        for (Eigen::Index k = 0; k < m_map.cols(); ++k)
          if (m_map(j, k)) out(i, k) = 1;
  return out;
}

bool identity_holds(const CorrespondenceSet& cs) {
  const auto expected = saturated_product(cs.m_q, cs.m_map);
  if (expected.rows() != cs.m_a.rows() || expected.cols() != cs.m_a.cols()) return false;
  for (Eigen::Index i = 0; i < expected.rows(); ++i)
    for (Eigen::Index k = 0; k < expected.cols(); ++k)
      if (cs.m_a(i, k) != expected(i, k)) return false;
  return true;
}

int row_sum(const BinaryMatrix& m, Eigen::Index r) {
  int s = 0;
  for (Eigen::Index c = 0; c < m.cols(); ++c) s += m(r, c);
  return s;
}

int col_sum(const BinaryMatrix& m, Eigen::Index c) {
  int s = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) s += m(r, c);
  return s;
}

Outcome matrix_identity() {
  Outcome o;
  std::vector<std::string> vocab;
  for (int i = 0; i < 12; ++i) vocab.push_back("category " + std::to_string(i));
  std::size_t multi_rows = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng gen(derive_seed(seed, "sample"));
    Rng draw(derive_seed(seed, "draw"));
    const std::size_t k = 1 + seed % 8;
    const auto planted = fuzz::expression_sample(gen, k, 5, "s" + std::to_string(seed));
    const SamplerConfig cfg{static_cast<std::size_t>(2 + seed % 9), static_cast<std::size_t>(1 + seed % 4), 0,
                            seed % 2 == 0};

    // Full batch: every planted box is one row and its row sum is the
    // number of queries it was listed under.
    const auto full = full_batch(planted.sample, std::max<std::size_t>(k, 1), 5);
    o.require(identity_holds(full.correspondence), "full batch identity, seed " + std::to_string(seed));
    std::vector<int> want, got;
    for (const auto& qs : planted.box_queries) want.push_back(static_cast<int>(qs.size()));
    for (std::size_t b = 0; b < full.correspondence.object_count(); ++b)
      got.push_back(row_sum(full.correspondence.m_q, static_cast<Eigen::Index>(b)));
    std::sort(want.begin(), want.end());
    std::sort(got.begin(), got.end());
    o.require(want == got, "multi-label row sums, seed " + std::to_string(seed));
    multi_rows += static_cast<std::size_t>(std::count_if(got.begin(), got.end(), [](int v) { return v > 1; }));

    // Sampled expression batch: rows count only the sampled queries.
    const auto rsvg = sample_rsvg(planted.sample, cfg, draw);
    o.require(identity_holds(rsvg.correspondence), "rsvg identity, seed " + std::to_string(seed));
    std::set<int> sampled;
    for (std::size_t j = 0; j < rsvg.text.q_max; ++j) {
      if (rsvg.text.query_valid[static_cast<Eigen::Index>(j)]) sampled.insert(rsvg.text.query_origin[j]);
      else o.require(col_sum(rsvg.correspondence.m_q, static_cast<Eigen::Index>(j)) == 0, "padded m_q column");
    }
    want.clear();
    got.clear();
    for (const auto& qs : planted.box_queries) {
      const auto hits = std::count_if(qs.begin(), qs.end(), [&](std::size_t q) { return sampled.contains(int(q)); });
      if (hits > 0) want.push_back(static_cast<int>(hits));
    }
    for (std::size_t b = 0; b < rsvg.correspondence.object_count(); ++b)
      got.push_back(row_sum(rsvg.correspondence.m_q, static_cast<Eigen::Index>(b)));
    std::sort(want.begin(), want.end());
    std::sort(got.begin(), got.end());
    o.require(want == got, "sampled multi-label row sums, seed " + std::to_string(seed));

    // Category batch: negative and padded columns carry no ones.
    const auto cat = fuzz::category_sample(gen, vocab, 1 + seed % 5, "c" + std::to_string(seed));
    const auto ovad = sample_ovad(cat, vocab, SamplerConfig{16, 2, 0, true}, draw);
    o.require(identity_holds(ovad.correspondence), "ovad identity, seed " + std::to_string(seed));
    for (std::size_t j = 0; j < ovad.text.q_max; ++j)
      if (ovad.text.query_origin[j] < 0)
        o.require(col_sum(ovad.correspondence.m_q, static_cast<Eigen::Index>(j)) == 0,
                  "negative column with ones, seed " + std::to_string(seed));
    if (!o.pass) break;
  }
  o.require(multi_rows > 0, "no multi-label rows were generated");
  if (o.pass) o.detail = "1000 seeds, " + std::to_string(multi_rows) + " multi-label rows";
  return o;
}

// ---- 4 -------------------------------------------------------------------

Outcome matcher_optimality() {
  Outcome o;
  Rng rng(4);
  const auto start = std::chrono::steady_clock::now();
  std::size_t mismatches = 0;
  for (int t = 0; t < 500; ++t) {
    const auto r = rng.uniform_int(1, 6), c = rng.uniform_int(1, 6);
    MatrixXd cost(r, c);
    const bool ties = t % 4 == 0;
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) cost(i, j) = ties ? double(rng.uniform_int(0, 2)) : 10.0 * rng.normal();
    const auto a = solve_assignment(cost);
    double s = 0.0;
    std::set<std::size_t> preds, gts;
    for (const auto& [p, g] : a.pairs) {
      s += cost(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(g));
      preds.insert(p);
      gts.insert(g);
    }
    const bool injective = preds.size() == a.pairs.size() && gts.size() == a.pairs.size() &&
                           a.pairs.size() == static_cast<std::size_t>(std::min(r, c));
    if (!injective || std::abs(s - oracle::brute_force_min(cost)) > 1e-9 * (1.0 + std::abs(s))) ++mismatches;
  }
  const double t = seconds_since(start);
  o.require(mismatches == 0, std::to_string(mismatches) + " mismatches");
  o.require(t < 5.0, "runtime " + fmt("%.2f", t) + " s");
  if (o.pass) o.detail = "500 instances, 0 mismatches, " + fmt("%.3f", t) + " s";
  return o;
}

// ---- 5 -------------------------------------------------------------------

Box px(double x1, double y1, double x2, double y2) { return {x1, y1, x2, y2, Frame::pixel}; }

Box grid_box(Rng& rng) {
  const double x = 10.0 * rng.uniform_int(0, 3), y = 10.0 * rng.uniform_int(0, 3);
  return px(x, y, x + 10.0 * rng.uniform_int(1, 2), y + 10.0 * rng.uniform_int(1, 2));
}

Outcome metric_oracles() {
  Outcome o;
  Rng rng(5);
  std::size_t ap_cases = 0;
  for (int t = 0; t < 5000; ++t) {
    std::vector<LabeledBox> gt;
    std::vector<ScoredBox> dets;
    const auto n_gt = rng.uniform_int(1, 5), n_det = rng.uniform_int(0, 8);
    for (std::int64_t i = 0; i < n_gt; ++i) gt.push_back({rng.uniform_int(0, 1) ? "a" : "b", "c", grid_box(rng)});
    for (std::int64_t i = 0; i < n_det; ++i)
      dets.push_back({rng.uniform_int(0, 1) ? "a" : "b", "c", grid_box(rng),
                      t % 2 ? rng.uniform_real() : double(rng.uniform_int(0, 4)) / 4.0});
    for (double thr : {0.5, 0.75}) {
      const double got = *average_precision(dets, gt, thr);
      const double want = oracle::ap_rank_enumeration(dets, gt, thr);
      o.require(std::abs(got - want) <= 1e-12, "AP differs from rank enumeration at case " + std::to_string(t));
      ++ap_cases;
    }
    if (!o.pass) return o;
  }

  // Hand-built fixtures: 3 of 4 localized; alignment at 0.5 / 0.7.
  const std::vector<ExpressionResult> fixture{
      {"i", 0, px(0, 0, 10, 10), {px(0, 0, 10, 10)}, {0.9, 0.8}},
      {"i", 1, px(0, 0, 10, 10), {px(0, 0, 10, 20)}, {0.6, 0.6}},
      {"i", 2, px(0, 0, 10, 10), {px(40, 40, 50, 50), px(1, 0, 11, 10)}, {}},
      {"i", 3, px(0, 0, 10, 10), {px(5, 0, 15, 10)}, {0.99}},
  };
  o.require(acc_at_05(fixture) == 0.75, "Acc@0.5 fixture");
  o.require(attr_align(fixture, 0.5).value == 0.5, "Attr-Align@0.5 fixture");
  o.require(attr_align(fixture, 0.6).value == 0.25, "Attr-Align@0.6 fixture (strict)");
  o.require(attr_align(fixture, 0.7).value == 0.25, "Attr-Align@0.7 fixture");
  o.require(attr_align(fixture, 0.9).value == 0.0, "Attr-Align@0.9 fixture");

  std::size_t sets = 0;
  for (int t = 0; t < 3000; ++t) {
    std::vector<ExpressionResult> e;
    const auto n = rng.uniform_int(0, 10);
    for (std::int64_t i = 0; i < n; ++i) {
      std::vector<double> scores(static_cast<std::size_t>(rng.uniform_int(0, 4)));
      for (auto& s : scores) s = rng.uniform_real();
      std::optional<Box> top;
      if (rng.uniform_int(0, 5) > 0) top = grid_box(rng);
      e.push_back({"i", static_cast<std::size_t>(i), top, {grid_box(rng)}, scores});
    }
    double prev = acc_at_05(e);
    for (int k = 1; k < 100; ++k) {
      const double v = attr_align(e, k / 100.0).value;
      o.require(v <= prev, "Attr-Align not monotone / above Acc at case " + std::to_string(t));
      prev = v;
    }
    ++sets;
    if (!o.pass) return o;
  }
  o.detail = std::to_string(ap_cases) + " AP cases, fixtures exact, " + std::to_string(sets) + " ordering sets";
  return o;
}

// ---- 6 and 7 -------------------------------------------------------------

Outcome toy_recovery() {
  Outcome o;
  const auto start = std::chrono::steady_clock::now();
  const ToyWorld world = generate_world(WorldConfig{});
  const TrainConfig cfg;
  o.require(world.images.size() == 4 && world.config.queries_per_image == 3 && world.config.max_attrs_per_query <= 3 &&
                cfg.steps == 500,
            "default configuration changed");
  const auto run = train(world, cfg);
  const double t = seconds_since(start);
  const auto rerun = train(world, cfg);

  const double before = full_objective(world, initial_state(world, cfg), cfg).total;
  const double after = full_objective(world, run.state, cfg).total;
  const auto r = evaluate_recovery(world, run.state, cfg);
  o.require(after <= 0.1 * before, "loss ratio " + fmt("%.4f", after / before));
  o.require(r.query.balanced() >= 0.95, "M_Q agreement " + fmt("%.4f", r.query.balanced()));
  o.require(r.attr.balanced() >= 0.95, "M_A agreement " + fmt("%.4f", r.attr.balanced()));
  o.require(run.history == rerun.history && run.state.params.w == rerun.state.params.w, "runs differ");
  o.require(t < 60.0, "runtime " + fmt("%.2f", t) + " s");
  if (o.pass)
    o.detail = "loss " + fmt("%.3f", before) + " -> " + fmt("%.3f", after) + ", M_Q " + fmt("%.3f", r.query.balanced()) +
               ", M_A " + fmt("%.3f", r.attr.balanced()) + ", bitwise repeat, " + fmt("%.2f", t) + " s";
  return o;
}

Outcome ablation_shape() {
  Outcome o;
  const ToyWorld world = generate_world(WorldConfig{});
  TrainConfig cfg;
  cfg.weights.attr = 0.0;
  const auto run = train(world, cfg);
  const auto r = evaluate_recovery(world, run.state, cfg);
  o.require(r.query.balanced() >= 0.9, "M_Q agreement " + fmt("%.4f", r.query.balanced()));
  o.require(r.attr.balanced() < 0.6, "M_A agreement " + fmt("%.4f", r.attr.balanced()));
  if (o.pass)
    o.detail = "M_Q " + fmt("%.3f", r.query.balanced()) + ", M_A " + fmt("%.3f", r.attr.balanced()) + " (raw " +
               fmt("%.3f", r.attr.raw()) + ")";
  return o;
}

// ---- 8 -------------------------------------------------------------------

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  return {std::istream_iterator<std::string>(in), std::istream_iterator<std::string>()};
}

std::string join_words(const std::vector<std::string>& w) {
  std::string out;
  for (std::size_t i = 0; i < w.size(); ++i) out += (i ? " " : "") + w[i];
  return out;
}

Outcome decomposition_validation() {
  Outcome o;
  const std::string caption = read_data("van_caption.txt");
  const auto r = parse_response(read_data("van_response.json"));
  const std::vector<std::string> aspects{"category", "color", "state", "spatial_relation"};
  o.require(r.attributes.size() == 4, "attribute count " + std::to_string(r.attributes.size()));
  for (std::size_t k = 0; k < std::min<std::size_t>(4, r.attributes.size()); ++k)
    o.require(r.attributes[k].aspect == aspects[k], "aspect " + std::to_string(k));
  o.require(validate(caption, r).accepted(), "appendix example rejected");

  // Every one-word substitution in every description must be caught.
  std::size_t mutations = 0;
  for (std::size_t k = 0; k < r.attributes.size(); ++k) {
    const auto words = split_words(r.attributes[k].description);
    for (std::size_t w = 0; w < words.size(); ++w) {
      auto mutated = words;
      mutated[w] = words[w] == "dark" ? "gray" : "dark";
      auto m = r;
      m.attributes[k].description = join_words(mutated);
      if (contains_verbatim(caption, m.attributes[k].description)) continue;
      ++mutations;
      o.require(!validate(caption, m).accepted(), "mutation accepted: " + m.attributes[k].description);
    }
  }

  Rng rng(8);
  for (int t = 0; t < 10000; ++t) {
    const std::string c = fuzz::caption(rng);
    const auto report = validate(c, mock_decompose(c, static_cast<std::uint64_t>(t)));
    if (!report.accepted()) {
      o.require(false, "mock rejected on caption '" + c + "'");
      break;
    }
  }
  if (o.pass) o.detail = "4 attributes accepted, " + std::to_string(mutations) + " mutations rejected, 10000 mock captions";
  return o;
}

// ---- 9 -------------------------------------------------------------------

MatrixXd gaussian(Rng& rng, Eigen::Index r, Eigen::Index c) {
  MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

struct LossSnapshot {
  double query, attr, box, giou;
  MatrixXd grad_query, grad_attr;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;

  bool operator==(const LossSnapshot& o) const {
    return query == o.query && attr == o.attr && box == o.box && giou == o.giou && grad_query == o.grad_query &&
           grad_attr == o.grad_attr && pairs == o.pairs;
  }
};

// Embeddings for valid slots come from the text; padded slots get `junk`.
MatrixXd slot_embeddings(const std::vector<std::string>& texts, const Mask& valid, std::size_t dim, Rng* junk) {
  MatrixXd out = MatrixXd::Zero(static_cast<Eigen::Index>(texts.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t j = 0; j < texts.size(); ++j) {
    if (valid[static_cast<Eigen::Index>(j)]) out.row(static_cast<Eigen::Index>(j)) = text_embedding(1, texts[j], dim).transpose();
    else if (junk) out.row(static_cast<Eigen::Index>(j)) = 1e3 * gaussian(*junk, 1, static_cast<Eigen::Index>(dim));
  }
  return out;
}

LossSnapshot run_losses(const SupervisionBatch& sb, const MatrixXd& feats, const std::vector<Box>& preds,
                        const HeadParams<double>& head, Rng* junk, bool scramble_masked_logits) {
  const std::size_t dim = static_cast<std::size_t>(head.d_txt());
  Mask attr_valid = sb.text.attr_valid;
  const auto logits = dual_forward(feats, slot_embeddings(sb.text.query_texts, sb.text.query_valid, dim, junk),
                                   slot_embeddings(sb.text.attr_texts, attr_valid, dim, junk), head, sb.text);
  auto q = logits.query;
  auto a = logits.attr;
  if (scramble_masked_logits && junk) {
    for (Eigen::Index j = 0; j < q.mask.size(); ++j)
      if (!q.mask[j]) q.values.col(j) = 50.0 * gaussian(*junk, q.values.rows(), 1);
    for (Eigen::Index j = 0; j < a.mask.size(); ++j)
      if (!a.mask[j]) a.values.col(j) = 50.0 * gaussian(*junk, a.values.rows(), 1);
  }
  const auto& cs = sb.correspondence;
  const auto assignment = hungarian_match(preds, q, cs.gt_boxes, query_columns(cs.m_q));
  const auto sem = semantic_losses(q, a, assignment, preds, cs, MalConfig{});
  const auto loc = localization_losses(preds, cs.gt_boxes, assignment);
  return {sem.query, sem.attr, loc.box, loc.giou, sem.grad_query, sem.grad_attr, assignment.pairs};
}

Outcome sampling_contract() {
  Outcome o;
  Rng gen(9), draw(90), junk(900);
  Rng head_rng(9000);
  const auto head = HeadParams<double>::init(6, 8, head_rng);
  std::size_t perturbations = 0;
  for (int t = 0; t < 10000; ++t) {
    // Category draws.
    const std::size_t v = static_cast<std::size_t>(gen.uniform_int(1, 12));
    std::vector<std::string> vocab;
    for (std::size_t i = 0; i < v; ++i) vocab.push_back("c" + std::to_string(i));
    const std::size_t pos = static_cast<std::size_t>(gen.uniform_int(1, static_cast<std::int64_t>(v)));
    const auto cat = fuzz::category_sample(gen, vocab, pos, "o" + std::to_string(t));
    const auto ovad = sample_ovad(cat, vocab, SamplerConfig{60, 3, 0, true}, draw);
    std::set<std::string> present;
    std::size_t negatives = 0;
    for (std::size_t j = 0; j < ovad.text.q_max; ++j) {
      if (!ovad.text.query_valid[static_cast<Eigen::Index>(j)]) continue;
      present.insert(ovad.text.query_texts[j]);
      if (ovad.text.query_origin[j] < 0) ++negatives;
    }
    for (const auto& q : cat.queries) o.require(present.contains(q.text), "positive missing at draw " + std::to_string(t));
    const std::size_t c_neg = v - pos;
    o.require(c_neg == 0 ? negatives == 0 : (negatives >= 1 && negatives <= c_neg),
              "negative count " + std::to_string(negatives) + " with |C_neg| " + std::to_string(c_neg));

    // Expression draws.
    const std::size_t k = static_cast<std::size_t>(gen.uniform_int(1, 9));
    const auto planted = fuzz::expression_sample(gen, k, 4, "r" + std::to_string(t));
    const SamplerConfig cfg{static_cast<std::size_t>(gen.uniform_int(static_cast<std::int64_t>(k), 12)), 3, 0, true};
    const auto rsvg = sample_rsvg(planted.sample, cfg, draw);
    const auto n = rsvg.text.valid_query_count();
    o.require(n >= 1 && n <= k, "expression count " + std::to_string(n) + " with K " + std::to_string(k));

    // Padded positions must not move any loss.
    if (t % 10 == 0) {
      const MatrixXd feats = gaussian(junk, 5, 6);
      std::vector<Box> preds;
      for (int p = 0; p < 5; ++p) {
        const double x = 0.7 * junk.uniform_real(), y = 0.7 * junk.uniform_real();
        preds.push_back({x, y, x + 0.05 + 0.25 * junk.uniform_real(), y + 0.05 + 0.25 * junk.uniform_real(), Frame::normalized});
      }
      for (const SupervisionBatch* sb : {&rsvg, &ovad}) {
        const auto clean = run_losses(*sb, feats, preds, head, nullptr, false);
        const auto dirty = run_losses(*sb, feats, preds, head, &junk, true);
        o.require(clean == dirty, "padded perturbation changed a loss at draw " + std::to_string(t));
        ++perturbations;
      }
    }
    if (!o.pass) break;
  }
  if (o.pass) o.detail = "10000 draws, " + std::to_string(perturbations) + " perturbation checks bit-identical";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient fidelity", gradient_fidelity},
      {"MAL boundary identities", mal_identities},
      {"matrix identity", matrix_identity},
      {"matcher optimality", matcher_optimality},
      {"metric oracles", metric_oracles},
      {"toy recovery", toy_recovery},
      {"ablation shape", ablation_shape},
      {"decomposition validation", decomposition_validation},
      {"sampling contract", sampling_contract},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double t = seconds_since(start);
    if (!o.pass) ++failures;
    std::printf("%s %zu %s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str(), t);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
