#include "ota/inference.hpp"

#include <algorithm>
#include <stdexcept>

#include "ota/data_model.hpp"
#include "ota/losses.hpp"

namespace ota {

AggregatedScores aggregate_attr_to_query(const LogitBlock<double>& s_attr, const BinaryMatrix& m_map,
                                         Reduction reduction) {
  const Eigen::Index n_pred = s_attr.values.rows();
  const Eigen::Index n_query = m_map.rows();
  if (m_map.cols() != s_attr.values.cols()) throw std::invalid_argument("aggregate_attr_to_query: m_map width mismatch");

  AggregatedScores out{Eigen::MatrixXd::Zero(n_pred, n_query), std::vector<bool>(static_cast<std::size_t>(n_query), true)};
  for (Eigen::Index j = 0; j < n_query; ++j) {
    std::vector<Eigen::Index> slots;
    for (Eigen::Index k = 0; k < m_map.cols(); ++k)
      if (m_map(j, k) && s_attr.mask[k]) slots.push_back(k);
    if (slots.empty()) continue;
    out.empty_block[static_cast<std::size_t>(j)] = false;
    for (Eigen::Index i = 0; i < n_pred; ++i) {
      double acc = reduction == Reduction::min ? 1.0 : 0.0;
      for (Eigen::Index k : slots) {
        const double p = sigmoid(s_attr.values(i, k));
        switch (reduction) {
          case Reduction::mean: acc += p; break;
          case Reduction::min: acc = std::min(acc, p); break;
          case Reduction::max: acc = std::max(acc, p); break;
        }
      }
      if (reduction == Reduction::mean) acc /= static_cast<double>(slots.size());
      out.probs(i, j) = acc;
    }
  }
  return out;
}

namespace {

// Attribute slots of query column j: the valid columns in m_map row j.
std::vector<Eigen::Index> block_columns(const BinaryMatrix& m_map, const Mask& attr_mask, Eigen::Index j) {
  std::vector<Eigen::Index> cols;
  for (Eigen::Index k = 0; k < m_map.cols(); ++k)
    if (m_map(j, k) && attr_mask[k]) cols.push_back(k);
  return cols;
}

BinaryMatrix map_from_batch(const TextBatch& batch) {
  const auto q_max = static_cast<Eigen::Index>(batch.q_max);
  BinaryMatrix m = BinaryMatrix::Zero(q_max, static_cast<Eigen::Index>(batch.q_max * batch.a_max));
  for (Eigen::Index j = 0; j < q_max; ++j) {
    if (!batch.query_valid[j]) continue;
    for (std::size_t k = 0; k < batch.a_max; ++k) {
      const auto slot = static_cast<Eigen::Index>(batch.attr_slot(static_cast<std::size_t>(j), k));
      if (batch.attr_valid[slot]) m(j, slot) = 1;
    }
  }
  return m;
}

Detection make_detection(std::size_t pred, std::size_t column, double score, std::span<const Box> pred_boxes,
                         const LogitBlock<double>& s_attr, const BinaryMatrix& m_map) {
  Detection d{pred_boxes[pred], column, score, {}, pred};
  const auto cols = block_columns(m_map, s_attr.mask, static_cast<Eigen::Index>(column));
  for (std::size_t k = 0; k < cols.size(); ++k)
    d.attrs.emplace_back(k, sigmoid(s_attr.values(static_cast<Eigen::Index>(pred), cols[k])));
  return d;
}

std::vector<Detection> decode_probs(const Eigen::MatrixXd& probs, const std::vector<bool>& column_valid,
                                    const LogitBlock<double>& s_attr, const BinaryMatrix& m_map,
                                    std::span<const Box> pred_boxes, const DecodeOptions& options) {
  if (static_cast<Eigen::Index>(pred_boxes.size()) != probs.rows())
    throw std::invalid_argument("decode: prediction count mismatch");
  std::vector<Detection> out;
  if (std::none_of(column_valid.begin(), column_valid.end(), [](bool b) { return b; })) return out;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = -1;
    for (Eigen::Index j = 0; j < probs.cols(); ++j)
      if (column_valid[static_cast<std::size_t>(j)] && (best < 0 || probs(i, j) > probs(i, best))) best = j;
    const double score = probs(i, best);
    if (score >= options.score_threshold)
      out.push_back(make_detection(static_cast<std::size_t>(i), static_cast<std::size_t>(best), score, pred_boxes, s_attr, m_map));
  }
  std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
    if (a.query_score != b.query_score) return a.query_score > b.query_score;
    return a.pred_index < b.pred_index;
  });
  if (out.size() > options.top_k) out.resize(options.top_k);
  return out;
}

}  // namespace

std::vector<Detection> decode(const LogitBlock<double>& s_query, const LogitBlock<double>& s_attr,
                              std::span<const Box> pred_boxes, const TextBatch& batch, const DecodeOptions& options) {
  Eigen::MatrixXd probs = s_query.values.unaryExpr([](double x) { return sigmoid(x); });
  std::vector<bool> valid(static_cast<std::size_t>(probs.cols()));
  for (Eigen::Index j = 0; j < probs.cols(); ++j) valid[static_cast<std::size_t>(j)] = s_query.mask[j];
  return decode_probs(probs, valid, s_attr, map_from_batch(batch), pred_boxes, options);
}

std::vector<Detection> decode_from_attributes(const LogitBlock<double>& s_attr, const BinaryMatrix& m_map,
                                              std::span<const Box> pred_boxes, const DecodeOptions& options,
                                              Reduction reduction) {
  const AggregatedScores agg = aggregate_attr_to_query(s_attr, m_map, reduction);
  std::vector<bool> valid(agg.empty_block.size());
  for (std::size_t j = 0; j < valid.size(); ++j) valid[j] = !agg.empty_block[j];
  return decode_probs(agg.probs, valid, s_attr, m_map, pred_boxes, options);
}

std::optional<Detection> select_top1_per_query(const LogitBlock<double>& s_query, const LogitBlock<double>& s_attr,
                                               std::span<const Box> pred_boxes, const TextBatch& batch,
                                               std::size_t query_column) {
  const auto j = static_cast<Eigen::Index>(query_column);
  if (j >= s_query.values.cols() || !s_query.mask[j] || s_query.values.rows() == 0) return std::nullopt;
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < s_query.values.rows(); ++i)
    if (s_query.values(i, j) > s_query.values(best, j)) best = i;
  return make_detection(static_cast<std::size_t>(best), query_column, sigmoid(s_query.values(best, j)), pred_boxes,
                        s_attr, map_from_batch(batch));
}

std::vector<Detection> to_sample_indexes(std::vector<Detection> detections, const TextBatch& batch) {
  std::vector<Detection> out;
  for (auto& d : detections) {
    const int origin = batch.query_origin.at(d.query_index);
    if (origin < 0) continue;
    d.query_index = static_cast<std::size_t>(origin);
    out.push_back(std::move(d));
  }
  return out;
}

nlohmann::json predictions_to_json(const std::string& image_id, std::span<const Detection> detections) {
  nlohmann::json dets = nlohmann::json::array();
  for (const auto& d : detections) {
    nlohmann::json attrs = nlohmann::json::array();
    for (const auto& [slot, score] : d.attrs) attrs.push_back({{"slot", slot}, {"score", score}});
    dets.push_back({{"box", box_to_json(d.box)}, {"query_index", d.query_index}, {"query_score", d.query_score}, {"attrs", attrs}});
  }
  return {{"image_id", image_id}, {"detections", dets}};
}

ImagePredictions predictions_from_json(const nlohmann::json& j) {
  ImagePredictions out{j.at("image_id").get<std::string>(), {}};
  std::size_t index = 0;
  for (const auto& d : j.at("detections")) {
    Detection det{box_from_json(d.at("box")), d.at("query_index").get<std::size_t>(), d.at("query_score").get<double>(), {}, index++};
    if (d.contains("attrs"))
      for (const auto& a : d.at("attrs")) det.attrs.emplace_back(a.at("slot").get<std::size_t>(), a.at("score").get<double>());
    out.detections.push_back(std::move(det));
  }
  return out;
}

}  // namespace ota
