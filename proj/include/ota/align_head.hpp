#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include <Eigen/Core>
#include <json.hpp>

#include "ota/rng.hpp"
#include "ota/supervision.hpp"

namespace ota {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Finite stand-in for the -inf padding mask; sigmoid of it is 0 in double.
template <typename Scalar>
inline constexpr Scalar kMaskedLogit = Scalar(-1e9);

/// Logit scale and bias. The scale is stored as its log so it stays positive.
template <typename Scalar>
struct LogitAffine {
  Scalar alpha_raw = std::log(Scalar(5));
  Scalar beta = Scalar(-2);

  Scalar alpha() const { return std::exp(alpha_raw); }
  static LogitAffine from_scale(Scalar alpha, Scalar beta) { return {std::log(alpha), beta}; }
};

/// Projection of visual features into text space plus one affine per
/// granularity. With shared_affine the attribute logits reuse `query`.
template <typename Scalar>
struct HeadParams {
  MatrixX<Scalar> w;  // d_txt x d_vis, no bias
  LogitAffine<Scalar> query;
  LogitAffine<Scalar> attr;
  bool shared_affine = false;

  Eigen::Index d_vis() const { return w.cols(); }
  Eigen::Index d_txt() const { return w.rows(); }
  const LogitAffine<Scalar>& attr_affine() const { return shared_affine ? query : attr; }

  /// Gaussian projection with std 1/sqrt(d_vis); both affines at (alpha, beta).
  static HeadParams init(Eigen::Index d_vis, Eigen::Index d_txt, Rng& rng, Scalar alpha = Scalar(5),
                         Scalar beta = Scalar(-2), bool shared = false) {
    HeadParams p;
    p.w.resize(d_txt, d_vis);
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(d_vis));
    for (Eigen::Index c = 0; c < d_vis; ++c)
      for (Eigen::Index r = 0; r < d_txt; ++r) p.w(r, c) = static_cast<Scalar>(rng.normal()) * scale;
    p.query = LogitAffine<Scalar>::from_scale(alpha, beta);
    p.attr = p.query;
    p.shared_affine = shared;
    return p;
  }
};

template <typename Scalar>
struct LogitBlock {
  MatrixX<Scalar> values;  // n_pred x n_cols
  Mask mask;               // n_cols, true = valid
};

/// Normalization is undefined for a zero row.
class ZeroNormError : public std::invalid_argument {
 public:
  ZeroNormError(std::string side, Eigen::Index row)
      : std::invalid_argument(side + " row " + std::to_string(row) + " has zero norm"), side_(std::move(side)), row_(row) {}
  const std::string& side() const { return side_; }
  Eigen::Index row() const { return row_; }

 private:
  std::string side_;
  Eigen::Index row_;
};

namespace detail {

template <typename Scalar>
struct Normalized {
  MatrixX<Scalar> unit;          // rows scaled to unit length (masked rows zero)
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> norm;
};

template <typename Derived>
Normalized<typename Derived::Scalar> normalize_rows(const Eigen::MatrixBase<Derived>& x, const Mask* keep,
                                                    const char* side) {
  using Scalar = typename Derived::Scalar;
  Normalized<Scalar> out{MatrixX<Scalar>::Zero(x.rows(), x.cols()), x.rowwise().norm()};
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (keep && !(*keep)[i]) continue;
    if (!(out.norm[i] > Scalar(0))) throw ZeroNormError(side, i);
    out.unit.row(i) = x.row(i) / out.norm[i];
  }
  return out;
}

// d(x/|x|) pulled back: (g - u (u.g)) / |x| per row.
template <typename Scalar>
MatrixX<Scalar> normalize_backward(const Normalized<Scalar>& n, const MatrixX<Scalar>& grad_unit) {
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(grad_unit.rows(), grad_unit.cols());
  for (Eigen::Index i = 0; i < grad_unit.rows(); ++i) {
    if (!(n.norm[i] > Scalar(0))) continue;
    const Scalar radial = n.unit.row(i).dot(grad_unit.row(i));
    out.row(i) = (grad_unit.row(i) - radial * n.unit.row(i)) / n.norm[i];
  }
  return out;
}

inline void require_shapes(Eigen::Index v_cols, Eigen::Index t_cols, Eigen::Index w_rows, Eigen::Index w_cols,
                           Eigen::Index t_rows, Eigen::Index mask_size) {
  if (v_cols != w_cols || t_cols != w_rows) throw std::invalid_argument("align head: feature dims do not match projection");
  if (t_rows != mask_size) throw std::invalid_argument("align head: mask length differs from text rows");
}

}  // namespace detail

/// values[i,j] = alpha * cos(v_i W^T, t_j) + beta for valid j, the masked
/// sentinel otherwise. Throws ZeroNormError for a zero projected row or a
/// zero valid text row.
template <typename DerivedV, typename DerivedT, typename Scalar = typename DerivedV::Scalar>
LogitBlock<Scalar> similarity_logits(const Eigen::MatrixBase<DerivedV>& v, const Eigen::MatrixBase<DerivedT>& t,
                                     const MatrixX<Scalar>& w, const LogitAffine<Scalar>& affine, const Mask& valid) {
  detail::require_shapes(v.cols(), t.cols(), w.rows(), w.cols(), t.rows(), valid.size());
  const MatrixX<Scalar> projected = v * w.transpose();
  const auto pv = detail::normalize_rows(projected, nullptr, "visual");
  const auto pt = detail::normalize_rows(t, &valid, "text");
  LogitBlock<Scalar> out{affine.alpha() * (pv.unit * pt.unit.transpose()), valid};
  out.values.array() += affine.beta;
  for (Eigen::Index j = 0; j < valid.size(); ++j)
    if (!valid[j]) out.values.col(j).setConstant(kMaskedLogit<Scalar>);
  return out;
}

template <typename Scalar>
struct SimilarityGrad {
  MatrixX<Scalar> v;  // n_pred x d_vis
  MatrixX<Scalar> t;  // n_cols x d_txt
  MatrixX<Scalar> w;  // d_txt x d_vis
  Scalar alpha_raw{0};
  Scalar beta{0};
};

/// Pulls `upstream` (dL/dlogits) back through the head. Masked columns
/// contribute nothing.
template <typename DerivedV, typename DerivedT, typename Scalar = typename DerivedV::Scalar>
SimilarityGrad<Scalar> similarity_backward(const Eigen::MatrixBase<DerivedV>& v, const Eigen::MatrixBase<DerivedT>& t,
                                           const MatrixX<Scalar>& w, const LogitAffine<Scalar>& affine,
                                           const Mask& valid, const MatrixX<Scalar>& upstream) {
  detail::require_shapes(v.cols(), t.cols(), w.rows(), w.cols(), t.rows(), valid.size());
  if (upstream.rows() != v.rows() || upstream.cols() != t.rows())
    throw std::invalid_argument("align head: upstream shape mismatch");

  MatrixX<Scalar> g = upstream;
  for (Eigen::Index j = 0; j < valid.size(); ++j)
    if (!valid[j]) g.col(j).setZero();

  const MatrixX<Scalar> projected = v * w.transpose();
  const auto pv = detail::normalize_rows(projected, nullptr, "visual");
  const auto pt = detail::normalize_rows(t, &valid, "text");
  const MatrixX<Scalar> cosine = pv.unit * pt.unit.transpose();
  const Scalar alpha = affine.alpha();

  SimilarityGrad<Scalar> grad;
  grad.beta = g.sum();
  grad.alpha_raw = alpha * (g.array() * cosine.array()).sum();
  const MatrixX<Scalar> grad_pv = detail::normalize_backward(pv, MatrixX<Scalar>(alpha * g * pt.unit));
  grad.t = detail::normalize_backward(pt, MatrixX<Scalar>(alpha * g.transpose() * pv.unit));
  grad.v = grad_pv * w;
  grad.w = grad_pv.transpose() * v;
  return grad;
}

template <typename Scalar>
struct DualLogits {
  LogitBlock<Scalar> query;
  LogitBlock<Scalar> attr;
};

/// Query- and attribute-level logits from one projection of the same
/// visual features.
template <typename Scalar>
DualLogits<Scalar> dual_forward(const MatrixX<Scalar>& features, const MatrixX<Scalar>& query_embeddings,
                                const MatrixX<Scalar>& attr_embeddings, const HeadParams<Scalar>& params,
                                const TextBatch& batch) {
  if (query_embeddings.rows() != static_cast<Eigen::Index>(batch.q_max) ||
      attr_embeddings.rows() != static_cast<Eigen::Index>(batch.q_max * batch.a_max))
    throw std::invalid_argument("dual_forward: embedding rows do not match the batch layout");
  Mask attr_mask = batch.attr_valid;
  for (std::size_t j = 0; j < batch.q_max; ++j)
    if (!batch.query_valid[static_cast<Eigen::Index>(j)])
      attr_mask.segment(static_cast<Eigen::Index>(j * batch.a_max), static_cast<Eigen::Index>(batch.a_max)).setConstant(false);
  return {similarity_logits(features, query_embeddings, params.w, params.query, batch.query_valid),
          similarity_logits(features, attr_embeddings, params.w, params.attr_affine(), attr_mask)};
}

// Checkpoints: 16-byte header {8-byte magic "OTAHEAD1", d_vis, d_txt as
// little-endian uint32}, then little-endian doubles: W row-major,
// query alpha_raw, query beta, attr alpha_raw, attr beta, shared flag.
void save_head(const std::filesystem::path& path, const HeadParams<double>& params);
HeadParams<double> load_head(const std::filesystem::path& path);
nlohmann::json to_json(const HeadParams<double>& params);

}  // namespace ota
