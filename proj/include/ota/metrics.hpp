#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ota/data_model.hpp"
#include "ota/geometry.hpp"
#include "ota/inference.hpp"

namespace ota {

inline constexpr double kAccIou = 0.5;

/// One referring expression: its top-1 answer and its ground truth (pixels).
struct ExpressionResult {
  std::string image_id;
  std::size_t query_index = 0;
  std::optional<Box> top1;
  std::vector<Box> gt;
  /// Attribute probabilities of top1 against the expression's attributes.
  std::vector<double> attr_scores;
};

/// Best IoU of top1 over the expression's GT boxes; 0 with no answer.
double best_iou(const ExpressionResult& e);

/// Inclusive: IoU >= 0.5 with any GT box.
bool localized(const ExpressionResult& e);

/// Fraction of localized expressions; 0 on an empty set.
double acc_at_05(std::span<const ExpressionResult> expressions);

struct AttrAlignResult {
  double value = 0.0;
  /// Expressions with no attributes. They can never pass and stay in the
  /// denominator so that the score is bounded by Acc@0.5.
  std::size_t zero_attribute = 0;
};

/// Localized and mean attribute probability strictly above tau.
/// Throws std::invalid_argument unless tau is in (0, 1).
AttrAlignResult attr_align(std::span<const ExpressionResult> expressions, double tau);

bool attr_aligned(const ExpressionResult& e, double tau);

struct ScoredBox {
  std::string image_id;
  std::string category;
  Box box;
  double score = 0.0;
};

struct LabeledBox {
  std::string image_id;
  std::string category;
  Box box;
};

/// Single-class AP: detections in score order (stable on ties) each take the
/// best-IoU unmatched GT of the same image at or above iou_thr; precision is
/// made monotone and sampled at 101 recall points. Categories are ignored.
/// Empty without GT.
std::optional<double> average_precision(std::span<const ScoredBox> detections, std::span<const LabeledBox> gt,
                                        double iou_thr);

struct DetectionSummary {
  std::optional<double> value;  // mean over categories with GT
  std::map<std::string, double> per_category;
  std::vector<std::string> excluded_categories;  // detections but no GT
};

DetectionSummary ap_at(std::span<const ScoredBox> detections, std::span<const LabeledBox> gt, double iou_thr);

/// Mean over categories and IoU thresholds 0.50:0.05:0.95.
DetectionSummary map_coco(std::span<const ScoredBox> detections, std::span<const LabeledBox> gt);

struct MetricReport {
  double acc_at_05 = 0.0;
  std::map<double, double> attr_align;
  std::optional<double> ap50;
  std::optional<double> map_coco;
  std::size_t expressions = 0;
  std::size_t zero_attribute_expressions = 0;
  std::size_t detections = 0;
  std::size_t gt = 0;
  std::vector<std::string> excluded_categories;
};

inline const std::vector<double> kDefaultTaus = {0.5, 0.6, 0.7};

struct EvalInput {
  std::vector<ExpressionResult> expressions;
  std::vector<ScoredBox> detections;
  std::vector<LabeledBox> gt;
};

/// Joins predictions with samples by image_id. Every query with GT becomes
/// one expression answered by its highest-scoring detection; the query text
/// is the AP category. Predictions for unknown images are an InputError.
EvalInput join_predictions(std::span<const AggregatedSample> samples, std::span<const ImagePredictions> predictions);

MetricReport evaluate(const EvalInput& input, const std::vector<double>& taus = kDefaultTaus);

nlohmann::json to_json(const MetricReport& report);
MetricReport metric_report_from_json(const nlohmann::json& j);

/// Two aligned columns: metric name and value in percent.
std::string format_table(const MetricReport& report);

/// image_id,query_index,iou,localized,attr_mean,aligned@tau...
void write_expression_csv(std::ostream& out, std::span<const ExpressionResult> expressions,
                          const std::vector<double>& taus = kDefaultTaus);

}  // namespace ota
