#include "ota/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace ota {

double best_iou(const ExpressionResult& e) {
  if (!e.top1) return 0.0;
  double best = 0.0;
  for (const auto& g : e.gt) best = std::max(best, iou(*e.top1, g));
  return best;
}

bool localized(const ExpressionResult& e) { return e.top1 && !e.gt.empty() && best_iou(e) >= kAccIou; }

double acc_at_05(std::span<const ExpressionResult> expressions) {
  if (expressions.empty()) return 0.0;
  const auto hits = std::count_if(expressions.begin(), expressions.end(), localized);
  return static_cast<double>(hits) / static_cast<double>(expressions.size());
}

namespace {

void check_tau(double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("attr_align: tau must lie in (0, 1)");
}

double attr_mean(const ExpressionResult& e) {
  if (e.attr_scores.empty()) return 0.0;
  return std::accumulate(e.attr_scores.begin(), e.attr_scores.end(), 0.0) / static_cast<double>(e.attr_scores.size());
}

}  // namespace

bool attr_aligned(const ExpressionResult& e, double tau) {
  check_tau(tau);
  return !e.attr_scores.empty() && localized(e) && attr_mean(e) > tau;
}

AttrAlignResult attr_align(std::span<const ExpressionResult> expressions, double tau) {
  check_tau(tau);
  AttrAlignResult out;
  std::size_t hits = 0;
  for (const auto& e : expressions) {
    if (e.attr_scores.empty()) ++out.zero_attribute;
    if (attr_aligned(e, tau)) ++hits;
  }
  if (!expressions.empty()) out.value = static_cast<double>(hits) / static_cast<double>(expressions.size());
  return out;
}

std::optional<double> average_precision(std::span<const ScoredBox> detections, std::span<const LabeledBox> gt,
                                        double iou_thr) {
  if (gt.empty()) return std::nullopt;

  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return detections[a].score > detections[b].score; });

  std::vector<bool> taken(gt.size(), false);
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const ScoredBox& d = detections[order[rank]];
    std::optional<std::size_t> match;
    double best = iou_thr;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (taken[g] || gt[g].image_id != d.image_id) continue;
      const double o = iou(d.box, gt[g].box);
      if (o >= best && (!match || o > best)) {
        best = o;
        match = g;
      }
    }
    if (match) {
      taken[*match] = true;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(rank + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gt.size()));
  }

  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);

  double sum = 0.0;
  std::size_t cursor = 0;
  for (int r = 0; r <= 100; ++r) {
    const double level = r / 100.0;
    while (cursor < recall.size() && recall[cursor] < level) ++cursor;
    if (cursor == recall.size()) break;
    sum += precision[cursor];
  }
  return sum / 101.0;
}

namespace {

DetectionSummary summarize(std::span<const ScoredBox> detections, std::span<const LabeledBox> gt,
                           std::span<const double> thresholds) {
  std::map<std::string, std::vector<ScoredBox>> dets_by_cat;
  std::map<std::string, std::vector<LabeledBox>> gt_by_cat;
  for (const auto& d : detections) dets_by_cat[d.category].push_back(d);
  for (const auto& g : gt) gt_by_cat[g.category].push_back(g);

  DetectionSummary out;
  for (const auto& [cat, dets] : dets_by_cat)
    if (!gt_by_cat.contains(cat)) out.excluded_categories.push_back(cat);

  double total = 0.0;
  for (const auto& [cat, boxes] : gt_by_cat) {
    const auto it = dets_by_cat.find(cat);
    const std::span<const ScoredBox> dets =
        it == dets_by_cat.end() ? std::span<const ScoredBox>{} : std::span<const ScoredBox>{it->second};
    double acc = 0.0;
    for (double thr : thresholds) acc += *average_precision(dets, boxes, thr);
    out.per_category[cat] = acc / static_cast<double>(thresholds.size());
    total += out.per_category[cat];
  }
  if (!gt_by_cat.empty()) out.value = total / static_cast<double>(gt_by_cat.size());
  return out;
}

}  // namespace

DetectionSummary ap_at(std::span<const ScoredBox> detections, std::span<const LabeledBox> gt, double iou_thr) {
  const double thr[] = {iou_thr};
  return summarize(detections, gt, thr);
}

DetectionSummary map_coco(std::span<const ScoredBox> detections, std::span<const LabeledBox> gt) {
  std::vector<double> thresholds;
  for (int i = 0; i < 10; ++i) thresholds.push_back((50 + 5 * i) / 100.0);
  return summarize(detections, gt, thresholds);
}

EvalInput join_predictions(std::span<const AggregatedSample> samples, std::span<const ImagePredictions> predictions) {
  std::unordered_map<std::string, const ImagePredictions*> by_image;
  for (const auto& p : predictions) by_image[p.image_id] = &p;
  std::set<std::string> known;
  for (const auto& s : samples) known.insert(s.image_id);
  for (const auto& p : predictions)
    if (!known.contains(p.image_id)) throw InputError("predictions for unknown image: " + p.image_id);

  EvalInput in;
  for (const auto& s : samples) {
    const auto it = by_image.find(s.image_id);
    const ImagePredictions* preds = it == by_image.end() ? nullptr : it->second;
    for (const auto& g : s.ground_truth) in.gt.push_back({s.image_id, s.queries.at(g.query_index).text, g.box});
    if (preds)
      for (const auto& d : preds->detections) {
        if (d.query_index >= s.queries.size())
          throw InputError(s.image_id + ": detection query_index " + std::to_string(d.query_index) + " out of range");
        in.detections.push_back({s.image_id, s.queries[d.query_index].text, d.box, d.query_score});
      }

    for (std::size_t q = 0; q < s.queries.size(); ++q) {
      ExpressionResult e{s.image_id, q, std::nullopt, {}, {}};
      for (const auto& g : s.ground_truth)
        if (g.query_index == q) e.gt.push_back(g.box);
      if (e.gt.empty()) continue;
      const Detection* best = nullptr;
      if (preds)
        for (const auto& d : preds->detections)
          if (d.query_index == q && (!best || d.query_score > best->query_score)) best = &d;
      if (best) {
        e.top1 = best->box;
        for (const auto& [slot, score] : best->attrs) e.attr_scores.push_back(score);
      }
      in.expressions.push_back(std::move(e));
    }
  }
  return in;
}

MetricReport evaluate(const EvalInput& input, const std::vector<double>& taus) {
  MetricReport r;
  r.acc_at_05 = acc_at_05(input.expressions);
  for (double tau : taus) {
    const AttrAlignResult a = attr_align(input.expressions, tau);
    r.attr_align[tau] = a.value;
    r.zero_attribute_expressions = a.zero_attribute;
  }
  if (taus.empty())
    r.zero_attribute_expressions = static_cast<std::size_t>(std::count_if(
        input.expressions.begin(), input.expressions.end(), [](const auto& e) { return e.attr_scores.empty(); }));
  const DetectionSummary ap50 = ap_at(input.detections, input.gt, 0.5);
  const DetectionSummary map = map_coco(input.detections, input.gt);
  r.ap50 = ap50.value;
  r.map_coco = map.value;
  r.excluded_categories = ap50.excluded_categories;
  r.expressions = input.expressions.size();
  r.detections = input.detections.size();
  r.gt = input.gt.size();
  return r;
}

namespace {

std::string tau_key(double tau) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", tau);
  return buf;
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

}  // namespace

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json align = nlohmann::json::object();
  for (const auto& [tau, v] : r.attr_align) align[tau_key(tau)] = v;
  return {{"acc_at_05", r.acc_at_05},
          {"attr_align", align},
          {"ap50", optional_json(r.ap50)},
          {"map", optional_json(r.map_coco)},
          {"counts",
           {{"expressions", r.expressions},
            {"zero_attribute_expressions", r.zero_attribute_expressions},
            {"detections", r.detections},
            {"gt", r.gt}}},
          {"excluded_categories", r.excluded_categories}};
}

MetricReport metric_report_from_json(const nlohmann::json& j) {
  MetricReport r;
  r.acc_at_05 = j.at("acc_at_05").get<double>();
  for (const auto& [key, v] : j.at("attr_align").items()) r.attr_align[std::stod(key)] = v.get<double>();
  if (!j.at("ap50").is_null()) r.ap50 = j.at("ap50").get<double>();
  if (!j.at("map").is_null()) r.map_coco = j.at("map").get<double>();
  const auto& c = j.at("counts");
  r.expressions = c.at("expressions").get<std::size_t>();
  r.zero_attribute_expressions = c.at("zero_attribute_expressions").get<std::size_t>();
  r.detections = c.at("detections").get<std::size_t>();
  r.gt = c.at("gt").get<std::size_t>();
  r.excluded_categories = j.value("excluded_categories", std::vector<std::string>{});
  return r;
}

std::string format_table(const MetricReport& r) {
  std::vector<std::pair<std::string, std::string>> rows;
  auto pct = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
    return std::string(buf);
  };
  rows.emplace_back("Acc@0.5", pct(r.acc_at_05));
  for (const auto& [tau, v] : r.attr_align) rows.emplace_back("Attr-Align@" + tau_key(tau), pct(v));
  rows.emplace_back("AP50", r.ap50 ? pct(*r.ap50) : "-");
  rows.emplace_back("mAP", r.map_coco ? pct(*r.map_coco) : "-");
  rows.emplace_back("expressions", std::to_string(r.expressions));
  rows.emplace_back("zero-attribute", std::to_string(r.zero_attribute_expressions));
  rows.emplace_back("detections", std::to_string(r.detections));
  rows.emplace_back("gt", std::to_string(r.gt));

  std::size_t width = 0;
  for (const auto& [name, v] : rows) width = std::max(width, name.size());
  std::ostringstream out;
  for (const auto& [name, v] : rows) out << name << std::string(width - name.size() + 2, ' ') << v << '\n';
  return out.str();
}

void write_expression_csv(std::ostream& out, std::span<const ExpressionResult> expressions,
                          const std::vector<double>& taus) {
  out << "image_id,query_index,iou,localized,attr_mean";
  for (double tau : taus) out << ",aligned@" << tau_key(tau);
  out << '\n';
  for (const auto& e : expressions) {
    out << e.image_id << ',' << e.query_index << ',' << best_iou(e) << ',' << (localized(e) ? 1 : 0) << ','
        << attr_mean(e);
    for (double tau : taus) out << ',' << (attr_aligned(e, tau) ? 1 : 0);
    out << '\n';
  }
}

}  // namespace ota
