#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "oracles.hpp"
#include "ota/errors.hpp"
#include "ota/metrics.hpp"
#include "ota/rng.hpp"

using namespace ota;

namespace {

Box px(double x1, double y1, double x2, double y2) { return {x1, y1, x2, y2, Frame::pixel}; }

ExpressionResult expr(std::optional<Box> top1, std::vector<Box> gt, std::vector<double> scores = {0.9}) {
  return {"img", 0, top1, std::move(gt), std::move(scores)};
}

Box grid_box(Rng& rng) {
  const double x = 10.0 * rng.uniform_int(0, 3), y = 10.0 * rng.uniform_int(0, 3);
  return px(x, y, x + 10.0 * rng.uniform_int(1, 2), y + 10.0 * rng.uniform_int(1, 2));
}

// Two samples with hand-computed metrics; see the expectations below.
std::vector<AggregatedSample> fixture_samples() {
  AggregatedSample a;
  a.image_id = "A";
  a.image_size = {100, 100};
  a.queries = {{"red car", QueryKind::expression, {{"color", "red", {}, 1.0}, {"category", "car", {}, 1.0}}},
               {"tree", QueryKind::category, {}}};
  a.ground_truth = {{px(0, 0, 10, 10), 0}, {px(50, 50, 70, 70), 1}};
  AggregatedSample b;
  b.image_id = "B";
  b.image_size = {100, 100};
  b.queries = {{"blue bus", QueryKind::expression, {{"color", "blue", {}, 1.0}}}};
  b.ground_truth = {{px(10, 10, 30, 30), 0}};
  return {a, b};
}

std::vector<ImagePredictions> fixture_predictions() {
  ImagePredictions a{"A",
                     {{px(0, 0, 10, 10), 0, 0.9, {{0, 0.8}, {1, 0.7}}, 0},
                      {px(80, 80, 90, 90), 0, 0.4, {{0, 0.1}, {1, 0.1}}, 1},
                      {px(50, 50, 70, 70), 1, 0.6, {}, 2}}};
  ImagePredictions b{"B", {{px(20, 20, 40, 40), 0, 0.8, {{0, 0.95}}, 0}}};
  return {a, b};
}

}  // namespace

TEST_CASE("perfect answers give full accuracy") {
  const std::vector<ExpressionResult> e{expr(px(0, 0, 5, 5), {px(0, 0, 5, 5)}), expr(px(1, 1, 9, 9), {px(1, 1, 9, 9)})};
  CHECK(acc_at_05(e) == 1.0);
}

TEST_CASE("an IoU of exactly one half counts") {
  const auto e = expr(px(0, 0, 10, 10), {px(0, 0, 10, 20)});
  CHECK(best_iou(e) == 0.5);
  CHECK(localized(e));
}

TEST_CASE("three of four expressions localized") {
  const std::vector<ExpressionResult> e{
      expr(px(0, 0, 10, 10), {px(0, 0, 10, 10)}),
      expr(px(0, 0, 10, 10), {px(0, 0, 10, 20)}),
      expr(px(0, 0, 10, 10), {px(40, 40, 50, 50), px(1, 0, 11, 10)}),
      expr(px(0, 0, 10, 10), {px(5, 0, 15, 10)}),
  };
  CHECK(acc_at_05(e) == 0.75);
  CHECK(acc_at_05(std::vector<ExpressionResult>{}) == 0.0);
  CHECK_FALSE(localized(expr(std::nullopt, {px(0, 0, 1, 1)})));
}

TEST_CASE("attribute alignment fixtures") {
  const std::vector<ExpressionResult> all_high{expr(px(0, 0, 10, 10), {px(0, 0, 10, 10)}, {0.9, 0.9}),
                                               expr(px(0, 0, 10, 10), {px(0, 0, 10, 20)}, {0.95, 0.85}),
                                               expr(px(0, 0, 10, 10), {px(30, 30, 40, 40)}, {0.9})};
  CHECK(attr_align(all_high, 0.7).value == acc_at_05(all_high));

  const std::vector<ExpressionResult> mid{expr(px(0, 0, 10, 10), {px(0, 0, 10, 10)}, {0.5, 0.7})};
  CHECK(attr_align(mid, 0.7).value == 0.0);
  CHECK(attr_align(mid, 0.5).value == 1.0);
  // Strictly above tau.
  const std::vector<ExpressionResult> edge{expr(px(0, 0, 10, 10), {px(0, 0, 10, 10)}, {0.6, 0.6})};
  CHECK(attr_align(edge, 0.6).value == 0.0);

  const std::vector<ExpressionResult> zero{expr(px(0, 0, 10, 10), {px(0, 0, 10, 10)}, {}),
                                           expr(px(0, 0, 10, 10), {px(0, 0, 10, 10)}, {0.9})};
  const auto r = attr_align(zero, 0.5);
  CHECK(r.zero_attribute == 1);
  CHECK(r.value == 0.5);

  CHECK_THROWS_AS(attr_align(zero, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(attr_align(zero, 1.0), std::invalid_argument);
}

TEST_CASE("attribute alignment is bounded by accuracy and falls with tau") {
  Rng rng(1);
  for (int t = 0; t < 2000; ++t) {
    std::vector<ExpressionResult> e;
    const auto n = rng.uniform_int(0, 8);
    for (std::int64_t i = 0; i < n; ++i) {
      std::vector<double> scores(static_cast<std::size_t>(rng.uniform_int(0, 4)));
      for (auto& s : scores) s = rng.uniform_real();
      std::optional<Box> top;
      if (rng.uniform_int(0, 5) > 0) top = grid_box(rng);
      e.push_back(expr(top, {grid_box(rng)}, scores));
    }
    const double acc = acc_at_05(e);
    double prev = acc;
    for (int k = 1; k < 100; ++k) {
      const double v = attr_align(e, k / 100.0).value;
      CHECK(v <= prev);
      prev = v;
    }
  }
}

TEST_CASE("single correct detection has AP one") {
  const std::vector<ScoredBox> d{{"i", "c", px(0, 0, 10, 10), 0.3}};
  const std::vector<LabeledBox> g{{"i", "c", px(0, 0, 10, 10)}};
  CHECK(*average_precision(d, g, 0.5) == 1.0);
  CHECK_FALSE(average_precision(d, {}, 0.5).has_value());
}

TEST_CASE("correct, wrong, correct over two ground truths") {
  const std::vector<LabeledBox> g{{"i", "c", px(0, 0, 10, 10)}, {"i", "c", px(50, 50, 60, 60)}};
  const std::vector<ScoredBox> d{{"i", "c", px(0, 0, 10, 10), 0.9},
                                 {"i", "c", px(20, 20, 30, 30), 0.8},
                                 {"i", "c", px(50, 50, 60, 60), 0.7}};
  const double ap = *average_precision(d, g, 0.5);
  CHECK(ap == doctest::Approx(oracle::ap_rank_enumeration(d, g, 0.5)).epsilon(1e-15));
  CHECK(ap == doctest::Approx((51.0 + 50.0 * 2.0 / 3.0) / 101.0).epsilon(1e-15));
}

TEST_CASE("a duplicate detection is a false positive") {
  const std::vector<LabeledBox> g{{"i", "c", px(0, 0, 10, 10)}};
  const std::vector<ScoredBox> d{{"i", "c", px(0, 0, 10, 10), 0.9}, {"i", "c", px(0, 0, 10, 10), 0.8}};
  CHECK(*average_precision(d, g, 0.5) == 1.0);
  const std::vector<LabeledBox> g2{g[0], {"i", "c", px(50, 50, 60, 60)}};
  // Second detection cannot take the first box again: precision 1/2 at the cutoff.
  const auto pr = oracle::precision_recall_at(d, g2, 2, 0.5);
  CHECK(pr.first == 0.5);
  CHECK(*average_precision(d, g2, 0.5) == doctest::Approx(51.0 / 101.0));
}

TEST_CASE("AP agrees with rank enumeration on small random instances") {
  Rng rng(2);
  for (int t = 0; t < 5000; ++t) {
    std::vector<LabeledBox> g;
    std::vector<ScoredBox> d;
    const auto n_gt = rng.uniform_int(1, 5), n_det = rng.uniform_int(0, 8);
    for (std::int64_t i = 0; i < n_gt; ++i) g.push_back({rng.uniform_int(0, 1) ? "a" : "b", "c", grid_box(rng)});
    for (std::int64_t i = 0; i < n_det; ++i) {
      // Coarse scores so ties happen.
      const double s = t % 2 ? rng.uniform_real() : double(rng.uniform_int(0, 4)) / 4.0;
      d.push_back({rng.uniform_int(0, 1) ? "a" : "b", "c", grid_box(rng), s});
    }
    for (double thr : {0.5, 0.75}) {
      const double ap = *average_precision(d, g, thr);
      REQUIRE(ap == doctest::Approx(oracle::ap_rank_enumeration(d, g, thr)).epsilon(1e-12));
    }
  }
}

TEST_CASE("metrics ignore the order of detections with distinct scores") {
  Rng rng(3);
  for (int t = 0; t < 500; ++t) {
    std::vector<LabeledBox> g;
    std::vector<ScoredBox> d;
    for (int i = 0; i < 4; ++i) g.push_back({"i", i % 2 ? "x" : "y", grid_box(rng)});
    for (int i = 0; i < 7; ++i) d.push_back({"i", i % 2 ? "x" : "y", grid_box(rng), (i + 1) / 8.0});
    const auto base = map_coco(d, g);
    rng.shuffle(d);
    const auto shuffled = map_coco(d, g);
    CHECK(*base.value == *shuffled.value);
    CHECK(base.per_category == shuffled.per_category);
  }
}

TEST_CASE("categories without ground truth are excluded and reported") {
  const std::vector<LabeledBox> g{{"i", "car", px(0, 0, 10, 10)}};
  const std::vector<ScoredBox> d{{"i", "car", px(0, 0, 10, 10), 0.9}, {"i", "ghost", px(0, 0, 10, 10), 0.9}};
  const auto s = ap_at(d, g, 0.5);
  CHECK(*s.value == 1.0);
  CHECK(s.excluded_categories == std::vector<std::string>{"ghost"});
  CHECK(s.per_category.size() == 1);
  CHECK_FALSE(ap_at(d, {}, 0.5).value.has_value());
}

TEST_CASE("joining predictions and evaluating the fixture") {
  const auto in = join_predictions(fixture_samples(), fixture_predictions());
  REQUIRE(in.expressions.size() == 3);
  CHECK(in.detections.size() == 4);
  CHECK(in.gt.size() == 3);
  CHECK(in.expressions[0].attr_scores == std::vector<double>{0.8, 0.7});

  const auto r = evaluate(in, {0.5, 0.7, 0.8});
  CHECK(r.acc_at_05 == doctest::Approx(2.0 / 3.0));
  CHECK(r.attr_align.at(0.5) == doctest::Approx(1.0 / 3.0));
  CHECK(r.attr_align.at(0.7) == doctest::Approx(1.0 / 3.0));
  CHECK(r.attr_align.at(0.8) == 0.0);
  CHECK(r.zero_attribute_expressions == 1);
  CHECK(*r.ap50 == doctest::Approx(2.0 / 3.0));
  CHECK(*r.map_coco == doctest::Approx(2.0 / 3.0));
  CHECK(r.expressions == 3);
  CHECK(r.detections == 4);
  CHECK(r.gt == 3);
}

TEST_CASE("predictions for unknown images are rejected") {
  auto preds = fixture_predictions();
  preds.push_back({"Z", {}});
  CHECK_THROWS_AS(join_predictions(fixture_samples(), preds), InputError);
}

TEST_CASE("missing predictions leave expressions unanswered") {
  const auto in = join_predictions(fixture_samples(), std::vector<ImagePredictions>{});
  CHECK(in.expressions.size() == 3);
  CHECK(acc_at_05(in.expressions) == 0.0);
  CHECK(*evaluate(in).ap50 == 0.0);
}

TEST_CASE("reports round trip and render") {
  const auto r = evaluate(join_predictions(fixture_samples(), fixture_predictions()));
  const auto j = to_json(r);
  CHECK(j.at("attr_align").contains("0.60"));
  const auto back = metric_report_from_json(j);
  CHECK(back.acc_at_05 == r.acc_at_05);
  CHECK(back.attr_align == r.attr_align);
  CHECK(back.ap50 == r.ap50);
  CHECK(back.map_coco == r.map_coco);
  CHECK(back.zero_attribute_expressions == r.zero_attribute_expressions);
  CHECK(to_json(back) == j);

  const auto table = format_table(r);
  CHECK(table.find("Acc@0.5") != std::string::npos);
  CHECK(table.find("66.67") != std::string::npos);
  CHECK(table.find("Attr-Align@0.70") != std::string::npos);

  std::ostringstream csv;
  write_expression_csv(csv, join_predictions(fixture_samples(), fixture_predictions()).expressions);
  const auto text = csv.str();
  CHECK(text.rfind("image_id,query_index,iou,localized,attr_mean,aligned@0.50,aligned@0.60,aligned@0.70\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
}
