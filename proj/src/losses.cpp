#include "ota/losses.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <stdexcept>

namespace ota {

namespace {
// A zero soft-target weight stays zero for every gamma, so at q=1 the
// (1-q)^gamma branch vanishes even when gamma=0.
double target_weight(double x, double gamma) { return x <= 0.0 ? 0.0 : std::pow(x, gamma); }
}  // namespace

double mal(double p, double q, int y, const MalConfig& cfg) {
  p = std::clamp(p, 0.0, 1.0);
  const double log_p = std::log(std::max(p, kProbClamp));
  const double log_not_p = std::log(std::max(1.0 - p, kProbClamp));
  if (y == 1) return -(target_weight(q, cfg.gamma) * log_p + target_weight(1.0 - q, cfg.gamma) * log_not_p);
  return -cfg.alpha_neg * std::pow(p, cfg.gamma) * log_not_p;
}

double mal_grad(double p, double q, int y, const MalConfig& cfg) {
  p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  if (y == 1) return -(target_weight(q, cfg.gamma) / p - target_weight(1.0 - q, cfg.gamma) / (1.0 - p));
  const double power_term = cfg.gamma == 0.0 ? 0.0 : cfg.gamma * std::pow(p, cfg.gamma - 1.0) * std::log(1.0 - p);
  return -cfg.alpha_neg * (power_term - std::pow(p, cfg.gamma) / (1.0 - p));
}

std::vector<int> Assignment::gt_of_pred(std::size_t n_pred) const {
  std::vector<int> out(n_pred, -1);
  for (const auto& [pred, gt] : pairs) out.at(pred) = static_cast<int>(gt);
  return out;
}

namespace {

// Square Kuhn-Munkres with potentials. Returns row -> column and the
// reduced costs a(i,j) - u(i) - v(j), which are >= 0 and vanish on every
// optimal matching's edges.
struct SquareSolution {
  std::vector<std::size_t> col_of_row;
  Eigen::MatrixXd reduced;
};

SquareSolution solve_square(const Eigen::MatrixXd& a) {
  const auto n = static_cast<std::size_t>(a.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  SquareSolution out{std::vector<std::size_t>(n), Eigen::MatrixXd(a.rows(), a.cols())};
  for (std::size_t j = 1; j <= n; ++j) out.col_of_row[p[j] - 1] = j - 1;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.reduced(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - u[i + 1] - v[j + 1];
  return out;
}

// Among perfect matchings on zero-reduced-cost edges (all optimal), picks the
// lexicographically smallest column sequence over the first `real_rows` rows.
void lexicographic_refine(SquareSolution& s, std::size_t real_rows, double tol) {
  const std::size_t n = s.col_of_row.size();
  auto tight = [&](std::size_t r, std::size_t c) {
    return s.reduced(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) <= tol;
  };
  std::vector<std::size_t> row_of_col(n);
  for (std::size_t r = 0; r < n; ++r) row_of_col[s.col_of_row[r]] = r;
  std::vector<bool> fixed_col(n, false);

  std::vector<bool> seen(n);
  std::function<bool(std::size_t)> augment = [&](std::size_t r) {
    for (std::size_t c = 0; c < n; ++c) {
      if (seen[c] || fixed_col[c] || !tight(r, c)) continue;
      seen[c] = true;
      const std::size_t owner = row_of_col[c];
      if (owner == n || augment(owner)) {
        s.col_of_row[r] = c;
        row_of_col[c] = r;
        return true;
      }
    }
    return false;
  };

  for (std::size_t r = 0; r < real_rows; ++r) {
    for (std::size_t c = 0; c < s.col_of_row[r]; ++c) {
      if (fixed_col[c] || !tight(r, c)) continue;
      // Move r onto c; the displaced owner must reach r's old column.
      const auto saved_cols = s.col_of_row;
      const auto saved_rows = row_of_col;
      const std::size_t old = s.col_of_row[r];
      const std::size_t displaced = row_of_col[c];
      s.col_of_row[r] = c;
      row_of_col[c] = r;
      row_of_col[old] = n;  // free
      std::fill(seen.begin(), seen.end(), false);
      seen[c] = true;
      if (augment(displaced)) break;
      s.col_of_row = saved_cols;
      row_of_col = saved_rows;
    }
    fixed_col[s.col_of_row[r]] = true;
  }
}

}  // namespace

Assignment solve_assignment(const Eigen::MatrixXd& cost) {
  if (!cost.allFinite()) throw std::invalid_argument("solve_assignment: non-finite cost");
  const auto n_pred = static_cast<std::size_t>(cost.rows());
  const auto n_gt = static_cast<std::size_t>(cost.cols());
  Assignment out;
  if (n_pred == 0 || n_gt == 0) {
    for (std::size_t i = 0; i < n_pred; ++i) out.unmatched_preds.push_back(i);
    return out;
  }

  // Rows of the square problem are the smaller side; dummy rows cost 0.
  const bool gt_rows = n_gt <= n_pred;
  const std::size_t small = std::min(n_pred, n_gt);
  const std::size_t n = std::max(n_pred, n_gt);
  Eigen::MatrixXd square = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  if (gt_rows)
    square.topRows(static_cast<Eigen::Index>(small)) = cost.transpose();
  else
    square.topRows(static_cast<Eigen::Index>(small)) = cost;

  SquareSolution s = solve_square(square);
  const double tol = 1e-9 * (1.0 + cost.cwiseAbs().maxCoeff());
  lexicographic_refine(s, small, tol);

  std::vector<bool> matched(n_pred, false);
  for (std::size_t r = 0; r < small; ++r) {
    const std::size_t pred = gt_rows ? s.col_of_row[r] : r;
    const std::size_t gt = gt_rows ? r : s.col_of_row[r];
    out.pairs.emplace_back(pred, gt);
    matched[pred] = true;
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  for (std::size_t i = 0; i < n_pred; ++i)
    if (!matched[i]) out.unmatched_preds.push_back(i);
  return out;
}

std::vector<std::vector<std::size_t>> query_columns(const BinaryMatrix& m_q) {
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(m_q.rows()));
  for (Eigen::Index i = 0; i < m_q.rows(); ++i)
    for (Eigen::Index j = 0; j < m_q.cols(); ++j)
      if (m_q(i, j)) out[static_cast<std::size_t>(i)].push_back(static_cast<std::size_t>(j));
  return out;
}

Eigen::MatrixXd matching_cost(std::span<const Box> pred_boxes, const LogitBlock<double>& s_query,
                              std::span<const Box> gt_boxes, const std::vector<std::vector<std::size_t>>& gt_query_cols,
                              const MatchCostWeights& weights) {
  if (static_cast<Eigen::Index>(pred_boxes.size()) != s_query.values.rows() || gt_boxes.size() != gt_query_cols.size())
    throw std::invalid_argument("matching_cost: shape mismatch");
  Eigen::MatrixXd cost(static_cast<Eigen::Index>(pred_boxes.size()), static_cast<Eigen::Index>(gt_boxes.size()));
  for (std::size_t i = 0; i < pred_boxes.size(); ++i) {
    const auto pi = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < gt_boxes.size(); ++j) {
      double cls = 0.0;
      for (std::size_t col : gt_query_cols[j]) cls += sigmoid(s_query.values(pi, static_cast<Eigen::Index>(col)));
      if (!gt_query_cols[j].empty()) cls /= static_cast<double>(gt_query_cols[j].size());
      cost(pi, static_cast<Eigen::Index>(j)) = -weights.cls * cls +
                                                weights.box * l1(to_cxcywh(pred_boxes[i]), to_cxcywh(gt_boxes[j])) -
                                                weights.giou * giou(pred_boxes[i], gt_boxes[j]);
    }
  }
  return cost;
}

Assignment hungarian_match(std::span<const Box> pred_boxes, const LogitBlock<double>& s_query,
                           std::span<const Box> gt_boxes, const std::vector<std::vector<std::size_t>>& gt_query_cols,
                           const MatchCostWeights& weights) {
  return solve_assignment(matching_cost(pred_boxes, s_query, gt_boxes, gt_query_cols, weights));
}

BlockLoss mal_block_loss(const LogitBlock<double>& logits, const BinaryMatrix& targets, const Assignment& assignment,
                         const Eigen::VectorXd& quality, const MalConfig& cfg, double n_pos) {
  const Eigen::Index n_pred = logits.values.rows();
  const Eigen::Index n_cols = logits.values.cols();
  if (targets.cols() != n_cols || quality.size() != n_pred || logits.mask.size() != n_cols)
    throw std::invalid_argument("mal_block_loss: shape mismatch");
  const std::vector<int> gt_of = assignment.gt_of_pred(static_cast<std::size_t>(n_pred));

  BlockLoss out{0.0, Eigen::MatrixXd::Zero(n_pred, n_cols)};
  // Fixed summation order: pred-major, column-minor.
  for (Eigen::Index i = 0; i < n_pred; ++i) {
    const int gt = gt_of[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < n_cols; ++j) {
      if (!logits.mask[j]) continue;
      const int y = gt >= 0 ? targets(gt, j) : 0;
      const double p = sigmoid(logits.values(i, j));
      out.value += mal(p, quality[i], y, cfg);
      if (p > kProbClamp && p < 1.0 - kProbClamp) out.grad(i, j) = mal_grad(p, quality[i], y, cfg) * p * (1.0 - p);
    }
  }
  out.value /= n_pos;
  out.grad /= n_pos;
  return out;
}

SemanticLosses semantic_losses(const LogitBlock<double>& s_query, const LogitBlock<double>& s_attr,
                               const Assignment& assignment, std::span<const Box> pred_boxes,
                               const CorrespondenceSet& cs, const MalConfig& cfg) {
  const Eigen::Index n_pred = s_query.values.rows();
  if (static_cast<Eigen::Index>(pred_boxes.size()) != n_pred || s_attr.values.rows() != n_pred)
    throw std::invalid_argument("semantic_losses: prediction count mismatch");

  Eigen::VectorXd quality = Eigen::VectorXd::Zero(n_pred);
  for (const auto& [pred, gt] : assignment.pairs) quality[static_cast<Eigen::Index>(pred)] = iou(pred_boxes[pred], cs.gt_boxes.at(gt));

  SemanticLosses out;
  out.n_pos = assignment.pairs.size();
  out.empty_ground_truth = cs.object_count() == 0;
  const double n_pos = static_cast<double>(std::max<std::size_t>(out.n_pos, 1));
  BlockLoss q = mal_block_loss(s_query, cs.m_q, assignment, quality, cfg, n_pos);
  BlockLoss a = mal_block_loss(s_attr, cs.m_a, assignment, quality, cfg, n_pos);
  out.query = q.value;
  out.attr = a.value;
  out.grad_query = std::move(q.grad);
  out.grad_attr = std::move(a.grad);
  return out;
}

LocalizationLosses localization_losses(std::span<const Box> pred_boxes, std::span<const Box> gt_boxes,
                                       const Assignment& assignment) {
  LocalizationLosses out;
  if (assignment.pairs.empty()) {
    out.empty = true;
    return out;
  }
  for (const auto& [pred, gt] : assignment.pairs) {
    out.box += l1(to_cxcywh(pred_boxes[pred]), to_cxcywh(gt_boxes[gt]));
    out.giou += 1.0 - giou(pred_boxes[pred], gt_boxes[gt]);
  }
  const auto n = static_cast<double>(assignment.pairs.size());
  out.box /= n;
  out.giou /= n;
  return out;
}

double total_loss(const LossParts& parts, const LossWeights& w) {
  return w.query * parts.query + w.attr * parts.attr + w.box * parts.box + w.giou * parts.giou + w.fgl * parts.fgl +
         w.ddf * parts.ddf;
}

nlohmann::json loss_log_line(std::size_t step, const LossParts& parts, std::size_t n_pos) {
  return {{"step", step},
          {"l_query", parts.query},
          {"l_attr", parts.attr},
          {"l_box", parts.box},
          {"l_giou", parts.giou},
          {"n_pos", n_pos}};
}

}  // namespace ota
