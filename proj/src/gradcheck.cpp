#include "ota/gradcheck.hpp"

#include <algorithm>
#include <functional>

namespace ota {

namespace {

struct Instance {
  Eigen::MatrixXd v;
  Eigen::MatrixXd t;
  HeadParams<double> params;
  Mask valid;
  Eigen::MatrixXd quality;
  Eigen::MatrixXi label;
};

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.normal();
  return m;
}

Instance random_instance(Rng& rng, bool minimal) {
  const auto dim = [&] { return minimal ? Eigen::Index{1} : static_cast<Eigen::Index>(rng.uniform_int(1, 5)); };
  const Eigen::Index n = dim(), c = dim(), d_vis = dim(), d_txt = dim();
  Instance x;
  x.v = gaussian(n, d_vis, rng);
  x.t = gaussian(c, d_txt, rng);
  x.params.w = gaussian(d_txt, d_vis, rng);
  x.params.query = LogitAffine<double>::from_scale(1.0 + 4.0 * rng.uniform_real(), -2.0 + 4.0 * rng.uniform_real());
  x.valid = Mask(c);
  for (Eigen::Index j = 0; j < c; ++j) x.valid[j] = minimal || rng.uniform_real() < 0.8;
  x.quality.resize(n, c);
  x.label.resize(n, c);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < c; ++j) {
      x.quality(i, j) = 0.05 + 0.9 * rng.uniform_real();
      x.label(i, j) = rng.uniform_real() < 0.5 ? 1 : 0;
    }
  return x;
}

double objective(const Instance& x, const Eigen::MatrixXd& v, const Eigen::MatrixXd& t, const HeadParams<double>& p,
                 const MalConfig& cfg) {
  const LogitBlock<double> s = similarity_logits(v, t, p.w, p.query, x.valid);
  double total = 0.0;
  for (Eigen::Index i = 0; i < s.values.rows(); ++i)
    for (Eigen::Index j = 0; j < s.values.cols(); ++j)
      if (x.valid[j]) total += mal(sigmoid(s.values(i, j)), x.quality(i, j), x.label(i, j), cfg);
  return total;
}

double relative_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric) {
  const double diff = (analytic - numeric).norm();
  if (diff < kGradCheckNoiseFloor) return 0.0;
  return diff / (analytic.norm() + numeric.norm());
}

// Central differences of `f` with respect to every entry of `target`.
Eigen::VectorXd numeric_gradient(Eigen::MatrixXd& target, double eps, const std::function<double()>& f) {
  Eigen::VectorXd out(target.size());
  for (Eigen::Index k = 0; k < target.size(); ++k) {
    double& entry = target.data()[k];
    const double saved = entry;
    entry = saved + eps;
    const double plus = f();
    entry = saved - eps;
    const double minus = f();
    entry = saved;
    out[k] = (plus - minus) / (2.0 * eps);
  }
  return out;
}

Eigen::VectorXd flat(const Eigen::MatrixXd& m) { return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size()); }

}  // namespace

GradCheckReport gradcheck(const GradCheckOptions& options) {
  Rng rng(options.seed);
  GradCheckReport report;
  report.trials = options.trials;
  report.tolerance = options.tolerance;
  for (const char* group : {"v", "t", "w", "alpha_raw", "beta"}) report.max_rel_error[group] = 0.0;

  for (std::size_t trial = 0; trial < options.trials; ++trial) {
    Instance x = random_instance(rng, trial == 0);
    const LogitBlock<double> s = similarity_logits(x.v, x.t, x.params.w, x.params.query, x.valid);
    Eigen::MatrixXd upstream = Eigen::MatrixXd::Zero(s.values.rows(), s.values.cols());
    for (Eigen::Index i = 0; i < upstream.rows(); ++i)
      for (Eigen::Index j = 0; j < upstream.cols(); ++j) {
        if (!x.valid[j]) continue;
        const double p = sigmoid(s.values(i, j));
        upstream(i, j) = mal_grad(p, x.quality(i, j), x.label(i, j), options.mal) * p * (1.0 - p);
      }
    SimilarityGrad<double> analytic = similarity_backward(x.v, x.t, x.params.w, x.params.query, x.valid, upstream);
    if (options.inject_fault) analytic.w = -analytic.w;

    Eigen::MatrixXd v = x.v, t = x.t;
    HeadParams<double> p = x.params;
    auto f = [&] { return objective(x, v, t, p, options.mal); };
    Eigen::MatrixXd alpha_raw(1, 1), beta(1, 1);
    alpha_raw(0, 0) = p.query.alpha_raw;
    beta(0, 0) = p.query.beta;
    auto f_alpha = [&] {
      p.query.alpha_raw = alpha_raw(0, 0);
      return f();
    };
    auto f_beta = [&] {
      p.query.beta = beta(0, 0);
      return f();
    };

    const double eps = options.epsilon;
    auto update = [&](const char* group, double err) {
      report.max_rel_error[group] = std::max(report.max_rel_error[group], err);
    };
    update("v", relative_error(flat(analytic.v), numeric_gradient(v, eps, f)));
    update("t", relative_error(flat(analytic.t), numeric_gradient(t, eps, f)));
    update("w", relative_error(flat(analytic.w), numeric_gradient(p.w, eps, f)));
    update("alpha_raw", relative_error(Eigen::VectorXd::Constant(1, analytic.alpha_raw), numeric_gradient(alpha_raw, eps, f_alpha)));
    p.query.alpha_raw = x.params.query.alpha_raw;
    update("beta", relative_error(Eigen::VectorXd::Constant(1, analytic.beta), numeric_gradient(beta, eps, f_beta)));
  }
  report.passed = std::all_of(report.max_rel_error.begin(), report.max_rel_error.end(),
                              [&](const auto& kv) { return kv.second < options.tolerance; });
  return report;
}

nlohmann::json to_json(const GradCheckReport& report) {
  return {{"trials", report.trials},
          {"tolerance", report.tolerance},
          {"max_rel_error", report.max_rel_error},
          {"passed", report.passed}};
}

}  // namespace ota
