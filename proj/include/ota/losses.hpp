#pragma once

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "ota/align_head.hpp"
#include "ota/geometry.hpp"
#include "ota/supervision.hpp"

namespace ota {

/// Matchability-aware loss hyperparameters. `alpha_neg` weighs the negative
/// branch and is unrelated to the head's logit scale.
struct MalConfig {
  double gamma = 1.5;
  double alpha_neg = 1.0;
};

struct LossWeights {
  double query = 1.0;
  double attr = 1.0;
  double box = 5.0;
  double giou = 2.0;
  double fgl = 0.15;
  double ddf = 1.5;
};

inline constexpr double kProbClamp = 1e-7;

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// y=1: -[q^g ln p + (1-q)^g ln(1-p)];  y=0: -alpha_neg p^g ln(1-p).
/// The clamp to [1e-7, 1-1e-7] is applied inside each logarithm, so both
/// ln terms stay finite while the perfect points (p=1 with q=1, p=0 with
/// y=0) give exactly 0. A soft-target weight with a zero base is zero for
/// every gamma (q=1 drops the (1-q)^g term even at g=0).
double mal(double p, double q, int y, const MalConfig& cfg);

/// dmal/dp, with p clamped to [1e-7, 1-1e-7].
double mal_grad(double p, double q, int y, const MalConfig& cfg);

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (pred, gt), sorted by pred
  std::vector<std::size_t> unmatched_preds;

  /// gt index per pred, -1 when unmatched.
  std::vector<int> gt_of_pred(std::size_t n_pred) const;
};

struct MatchCostWeights {
  double cls = 2.0;
  double box = 5.0;
  double giou = 2.0;
};

/// Minimum-cost injective assignment of preds (rows) to ground truth
/// (columns); min(rows, cols) pairs. Among optimal assignments the one whose
/// partner sequence, read in index order along the smaller side, is
/// lexicographically smallest is returned. Throws on non-finite costs.
Assignment solve_assignment(const Eigen::MatrixXd& cost);

/// cost(i,j) = cls*(-mean sigmoid over gt j's query columns) + box*L1(cxcywh)
///           + giou*(-giou). Boxes in the normalized frame.
Eigen::MatrixXd matching_cost(std::span<const Box> pred_boxes, const LogitBlock<double>& s_query,
                              std::span<const Box> gt_boxes, const std::vector<std::vector<std::size_t>>& gt_query_cols,
                              const MatchCostWeights& weights);

Assignment hungarian_match(std::span<const Box> pred_boxes, const LogitBlock<double>& s_query,
                           std::span<const Box> gt_boxes, const std::vector<std::vector<std::size_t>>& gt_query_cols,
                           const MatchCostWeights& weights = {});

/// Query columns with a one in each m_q row.
std::vector<std::vector<std::size_t>> query_columns(const BinaryMatrix& m_q);

struct BlockLoss {
  double value = 0.0;
  Eigen::MatrixXd grad;  // dvalue/dlogits, zero on masked columns
};

/// Sum over valid columns of mal(sigmoid(logit), q_i, y) / n_pos, where
/// matched preds take their row of `targets` and unmatched preds take y=0.
BlockLoss mal_block_loss(const LogitBlock<double>& logits, const BinaryMatrix& targets, const Assignment& assignment,
                         const Eigen::VectorXd& quality, const MalConfig& cfg, double n_pos);

struct SemanticLosses {
  double query = 0.0;
  double attr = 0.0;
  std::size_t n_pos = 0;
  bool empty_ground_truth = false;
  Eigen::MatrixXd grad_query;
  Eigen::MatrixXd grad_attr;
};

/// Query- and attribute-level MAL terms sharing one assignment and one IoU
/// target per matched pred. Pred boxes in the normalized frame.
SemanticLosses semantic_losses(const LogitBlock<double>& s_query, const LogitBlock<double>& s_attr,
                               const Assignment& assignment, std::span<const Box> pred_boxes,
                               const CorrespondenceSet& cs, const MalConfig& cfg);

struct LocalizationLosses {
  double box = 0.0;
  double giou = 0.0;
  bool empty = false;
};

/// Mean L1 (cxcywh) and mean 1-giou over matched pairs.
LocalizationLosses localization_losses(std::span<const Box> pred_boxes, std::span<const Box> gt_boxes,
                                       const Assignment& assignment);

struct LossParts {
  double query = 0.0;
  double attr = 0.0;
  double box = 0.0;
  double giou = 0.0;
  double fgl = 0.0;  // not modeled; stays zero
  double ddf = 0.0;  // not modeled; stays zero

  friend bool operator==(const LossParts&, const LossParts&) = default;
};

double total_loss(const LossParts& parts, const LossWeights& weights);

/// {"step","l_query","l_attr","l_box","l_giou","n_pos"}
nlohmann::json loss_log_line(std::size_t step, const LossParts& parts, std::size_t n_pos);

}  // namespace ota
