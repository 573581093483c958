#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "ota/align_head.hpp"
#include "ota/supervision.hpp"

namespace ota {

enum class Reduction { mean, min, max };

struct Detection {
  Box box;
  std::size_t query_index = 0;  // query column (batch slot)
  double query_score = 0.0;
  /// (attribute position within the query's block, probability)
  std::vector<std::pair<std::size_t, double>> attrs;
  std::size_t pred_index = 0;
};

struct AggregatedScores {
  Eigen::MatrixXd probs;  // n_pred x q_max
  /// Queries whose block has no valid attribute; their column is 0.
  std::vector<bool> empty_block;
};

/// Reduces sigmoid(S_attr) over each query's attribute slots (rows of m_map)
/// in probability space. Masked attribute columns never enter the reduction.
AggregatedScores aggregate_attr_to_query(const LogitBlock<double>& s_attr, const BinaryMatrix& m_map,
                                         Reduction reduction = Reduction::mean);

struct DecodeOptions {
  double score_threshold = 0.3;
  std::size_t top_k = 100;
};

/// One candidate per prediction: the best valid query column by probability,
/// kept when its score reaches the threshold. Sorted by score (descending),
/// ties by prediction index, then cut to top_k.
std::vector<Detection> decode(const LogitBlock<double>& s_query, const LogitBlock<double>& s_attr,
                              std::span<const Box> pred_boxes, const TextBatch& batch, const DecodeOptions& options);

/// Same pipeline, scoring queries from their attributes only.
std::vector<Detection> decode_from_attributes(const LogitBlock<double>& s_attr, const BinaryMatrix& m_map,
                                              std::span<const Box> pred_boxes, const DecodeOptions& options,
                                              Reduction reduction = Reduction::mean);

/// Highest-scoring prediction for query column j, ignoring any threshold.
/// Empty when column j is masked or there are no predictions.
std::optional<Detection> select_top1_per_query(const LogitBlock<double>& s_query, const LogitBlock<double>& s_attr,
                                               std::span<const Box> pred_boxes, const TextBatch& batch,
                                               std::size_t query_column);

/// Rewrites batch query columns to the sample's original query indexes and
/// drops detections on sampled negatives.
std::vector<Detection> to_sample_indexes(std::vector<Detection> detections, const TextBatch& batch);

/// {"image_id","detections":[{"box","query_index","query_score","attrs":[{"slot","score"}]}]}
nlohmann::json predictions_to_json(const std::string& image_id, std::span<const Detection> detections);

struct ImagePredictions {
  std::string image_id;
  std::vector<Detection> detections;
};

ImagePredictions predictions_from_json(const nlohmann::json& j);

}  // namespace ota
