#include "obigrad/estimator.hpp"

#include <cmath>

namespace obigrad {

namespace {

std::vector<double> to_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }

// Scores from precomputed blocks. Y, G are n x q; DG, J are n x (d*q);
// H, M are n x q. Row i of the result is the d-vector score at observation i.
Mat dr_scores(const Mat& y, const Mat& g, const Mat& dg, const Mat& h, const Mat& j,
              const Mat& m, int d, int q) {
  const Eigen::Index n = y.rows();
  const Mat resid = y - g;    // Y - g_omega(Z)
  const Mat correction = m - h;  // m(X) - h(X)
  Mat out(n, d);
  for (int k = 0; k < d; ++k) {
    const auto jk = j.middleCols(k * q, q);
    const auto dgk = dg.middleCols(k * q, q);
    out.col(k) = -(resid.array() * jk.array()).rowwise().sum() -
                 (dgk.array() * correction.array()).rowwise().sum() +
                 (jk.array() * correction.array()).rowwise().sum();
  }
  return out;
}

Mat plugin_scores(const Mat& y, const Mat& h, const Mat& j, int d, int q) {
  const Eigen::Index n = y.rows();
  const Mat resid = h - y;  // h(X) - Y
  Mat out(n, d);
  for (int k = 0; k < d; ++k) {
    out.col(k) = (resid.array() * j.middleCols(k * q, q).array()).rowwise().sum();
  }
  return out;
}

Mat empirical_covariance(const Mat& scores, const Vec& center) {
  const Mat centered = scores.rowwise() - center.transpose();
  return centered.transpose() * centered / static_cast<double>(scores.rows());
}

GradientReport finalize_report(std::string method, const Vec& omega, const Vec& psi_hat,
                               const Mat& sigma_hat, int n_total, double alpha,
                               std::uint64_t seed) {
  GradientReport report;
  report.method = std::move(method);
  report.omega = omega;
  report.psi_hat = psi_hat;
  report.sigma_hat = sigma_hat;
  report.alpha = alpha;
  report.n_total = n_total;
  report.seed = seed;
  std::tie(report.ci_lower, report.ci_upper) =
      wald_ci(psi_hat, sigma_hat, n_total, alpha, &report.variance_clipped);
  return report;
}

enum class ScoreKind { doubly_robust, plugin };

// Shared two-fold cross-fitting protocol for the DR and plug-in scores.
GradientReport cross_fit_estimate(const Dataset& data, const StructuralModel& model,
                                  const Vec& omega, const LearnerConfig& config,
                                  std::uint64_t seed, double alpha, ScoreKind kind) {
  validate_dataset(data);
  const FoldSplit split = split_folds(data, seed);
  const Dataset fold1 = data.subset(split.fold1);
  const Dataset fold2 = data.subset(split.fold2);
  const int d = model.dim_omega;
  const int q = model.dim_out;

  Vec psi_hat = Vec::Zero(d);
  Mat scores[2];
  const Dataset* eval[2] = {&fold1, &fold2};
  const Dataset* train[2] = {&fold2, &fold1};
  for (int r = 0; r < 2; ++r) {
    NuisanceSet eta = fit_nuisances(*train[r], model, omega, config);
    Mat h, j, m;
    eta.evaluate(eval[r]->x, h, j, m);
    if (kind == ScoreKind::doubly_robust) {
      const Mat g = model.values(omega, eval[r]->z);
      const Mat dg = model.gradients(omega, eval[r]->z);
      scores[r] = dr_scores(eval[r]->y, g, dg, h, j, m, d, q);
    } else {
      scores[r] = plugin_scores(eval[r]->y, h, j, d, q);
    }
    psi_hat += 0.5 * scores[r].colwise().mean().transpose();
  }

  Mat sigma = Mat::Zero(d, d);
  for (int r = 0; r < 2; ++r) sigma += 0.5 * empirical_covariance(scores[r], psi_hat);

  return finalize_report(kind == ScoreKind::doubly_robust ? "obigrad" : "plugin", omega, psi_hat,
                         sigma, data.size(), alpha, seed);
}

}  // namespace

nlohmann::json GradientReport::to_json() const {
  nlohmann::json j;
  j["method"] = method;
  j["omega"] = to_std(omega);
  j["psi_hat"] = to_std(psi_hat);
  std::vector<std::vector<double>> sigma;
  for (Eigen::Index r = 0; r < sigma_hat.rows(); ++r) {
    sigma.push_back(to_std(sigma_hat.row(r).transpose()));
  }
  j["sigma_hat"] = sigma;
  j["ci_lower"] = to_std(ci_lower);
  j["ci_upper"] = to_std(ci_upper);
  j["alpha"] = alpha;
  j["n_total"] = n_total;
  j["seed"] = seed;
  return j;
}

Vec pseudo_outcome(const Observation& o, const NuisanceSet& eta, const StructuralModel& model,
                   const Vec& omega) {
  const int d = model.dim_omega;
  const Vec g = model.g(omega, o.z);
  const Mat dg = model.dg(omega, o.z);  // d x q
  const Mat j = eta.j_at(o.x);          // d x q
  const Vec correction = eta.m_at(o.x) - eta.h_at(o.x);
  const Vec resid = o.y - g;
  Vec out(d);
  for (int k = 0; k < d; ++k) {
    out[k] = -resid.dot(j.row(k)) - dg.row(k).dot(correction) + j.row(k).dot(correction);
  }
  return out;
}

Vec plugin_score(const Observation& o, const NuisanceSet& eta) {
  const Mat j = eta.j_at(o.x);
  const Vec resid = eta.h_at(o.x) - o.y;
  Vec out(eta.dim_omega);
  for (int k = 0; k < eta.dim_omega; ++k) out[k] = j.row(k).dot(resid);
  return out;
}

Mat pseudo_outcome_matrix(const Dataset& data, const NuisanceSet& eta,
                          const StructuralModel& model, const Vec& omega) {
  Mat h, j, m;
  eta.evaluate(data.x, h, j, m);
  const Mat g = model.values(omega, data.z);
  const Mat dg = model.gradients(omega, data.z);
  return dr_scores(data.y, g, dg, h, j, m, model.dim_omega, model.dim_out);
}

Mat plugin_score_matrix(const Dataset& data, const NuisanceSet& eta) {
  Mat h, j, m;
  eta.evaluate(data.x, h, j, m);
  return plugin_scores(data.y, h, j, eta.dim_omega, eta.dim_out);
}

std::pair<Vec, Vec> wald_ci(const Vec& psi_hat, const Mat& sigma_hat, int n_total, double alpha,
                            bool* clipped) {
  if (sigma_hat.rows() != psi_hat.size() || sigma_hat.cols() != psi_hat.size()) {
    throw ShapeError("wald_ci: covariance does not match estimate dimension");
  }
  if (n_total < 1) throw SizingError("wald_ci: n_total must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw NumericalError("wald_ci: alpha must lie in (0,1)");
  const double z = normal_quantile(1.0 - alpha / 2.0);
  const int d = static_cast<int>(psi_hat.size());
  Vec lower(d), upper(d);
  if (clipped) *clipped = false;
  for (int k = 0; k < d; ++k) {
    double var = sigma_hat(k, k);
    if (var < 0.0) {
      if (var < -1e-12) {
        throw NumericalError("wald_ci: covariance diagonal " + std::to_string(k) +
                             " is negative (" + std::to_string(var) + ")");
      }
      var = 0.0;
      if (clipped) *clipped = true;
    }
    const double half = z * std::sqrt(var / static_cast<double>(n_total));
    lower[k] = psi_hat[k] - half;
    upper[k] = psi_hat[k] + half;
  }
  return {lower, upper};
}

GradientReport dr_estimate(const Dataset& data, const StructuralModel& model, const Vec& omega,
                           const LearnerConfig& config, std::uint64_t seed, double alpha) {
  return cross_fit_estimate(data, model, omega, config, seed, alpha, ScoreKind::doubly_robust);
}

GradientReport plugin_estimate(const Dataset& data, const StructuralModel& model,
                               const Vec& omega, const LearnerConfig& config, std::uint64_t seed,
                               double alpha) {
  return cross_fit_estimate(data, model, omega, config, seed, alpha, ScoreKind::plugin);
}

GradientReport dr_estimate_one_fold(const Dataset& data, const StructuralModel& model,
                                    const Vec& omega, const LearnerConfig& config,
                                    std::uint64_t seed, double alpha) {
  validate_dataset(data);
  const FoldSplit split = split_folds(data, seed);
  const Dataset train = data.subset(split.fold1);
  const Dataset eval = data.subset(split.fold2);
  const NuisanceSet eta = fit_nuisances(train, model, omega, config);
  const Mat scores = pseudo_outcome_matrix(eval, eta, model, omega);
  const Vec psi_hat = scores.colwise().mean().transpose();
  const Mat sigma = empirical_covariance(scores, psi_hat);
  return finalize_report("obigrad", omega, psi_hat, sigma, eval.size(), alpha, seed);
}

GradientReport oracle_dr_estimate(const Dataset& data, const StructuralModel& model,
                                  const Vec& omega, const NuisanceSet& oracle, double alpha) {
  validate_dataset(data);
  const Mat scores = pseudo_outcome_matrix(data, oracle, model, omega);
  const Vec psi_hat = scores.colwise().mean().transpose();
  const Mat sigma = empirical_covariance(scores, psi_hat);
  return finalize_report("oracle_dr", omega, psi_hat, sigma, data.size(), alpha, 0);
}

namespace {

struct NuisanceBlocks {
  Mat h, j, m;
};

NuisanceBlocks eval_blocks(const NuisanceSet& eta, const Mat& eval_x) {
  NuisanceBlocks b;
  eta.evaluate(eval_x, b.h, b.j, b.m);
  return b;
}

// Mean over the sample of <a_k(x), b(x)>, one entry per coordinate k.
Vec mean_inner(const Mat& a, const Mat& b, int d, int q) {
  Vec out(d);
  for (int k = 0; k < d; ++k) {
    out[k] = (a.middleCols(k * q, q).array() * b.array()).rowwise().sum().mean();
  }
  return out;
}

}  // namespace

BiasDecomposition dr_population_bias(const NuisanceSet& eta, const NuisanceSet& oracle,
                                     const Mat& eval_x) {
  const int d = eta.dim_omega, q = eta.dim_out;
  const NuisanceBlocks fit = eval_blocks(eta, eval_x);
  const NuisanceBlocks star = eval_blocks(oracle, eval_x);
  const Mat j_diff = fit.j - star.j;
  BiasDecomposition out;
  out.dr_term_hj = -mean_inner(j_diff, fit.h - star.h, d, q);
  out.dr_term_jm = mean_inner(j_diff, fit.m - star.m, d, q);
  out.plugin_linear_h = Vec::Zero(d);
  out.plugin_linear_j = Vec::Zero(d);
  out.plugin_cross = Vec::Zero(d);
  return out;
}

BiasDecomposition plugin_bias_decomposition(const NuisanceSet& eta, const NuisanceSet& oracle,
                                            const Mat& eval_x) {
  const int d = eta.dim_omega, q = eta.dim_out;
  const NuisanceBlocks fit = eval_blocks(eta, eval_x);
  const NuisanceBlocks star = eval_blocks(oracle, eval_x);
  const Mat h_diff = fit.h - star.h;
  const Mat j_diff = fit.j - star.j;
  BiasDecomposition out;
  out.dr_term_hj = Vec::Zero(d);
  out.dr_term_jm = Vec::Zero(d);
  out.plugin_linear_h = mean_inner(star.j, h_diff, d, q);
  out.plugin_linear_j = mean_inner(j_diff, star.h - star.m, d, q);
  out.plugin_cross = mean_inner(j_diff, h_diff, d, q);
  return out;
}

NuisanceErrors nuisance_errors(const NuisanceSet& eta, const NuisanceSet& oracle,
                               const Mat& eval_x) {
  const NuisanceBlocks fit = eval_blocks(eta, eval_x);
  const NuisanceBlocks star = eval_blocks(oracle, eval_x);
  NuisanceErrors err;
  err.h_err = std::sqrt((fit.h - star.h).array().square().rowwise().sum().mean());
  // Jacobian error is reported per coordinate: stacked norm divided by sqrt(d).
  err.j_err = std::sqrt((fit.j - star.j).array().square().rowwise().sum().mean() /
                        static_cast<double>(eta.dim_omega));
  err.m_err = std::sqrt((fit.m - star.m).array().square().rowwise().sum().mean());
  return err;
}

}  // namespace obigrad
