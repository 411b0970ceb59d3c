#include "obigrad/kbo.hpp"

#include <cmath>
#include <memory>

#include <Eigen/Cholesky>

#include "obigrad/nuisance.hpp"

namespace obigrad {

namespace {

Mat gaussian_gram(const Mat& a, const Mat& b, double bandwidth) {
  // |a_i - b_j|^2 = |a_i|^2 + |b_j|^2 - 2 a_i . b_j
  const Vec a2 = a.rowwise().squaredNorm();
  const Vec b2 = b.rowwise().squaredNorm();
  Mat sq = (-2.0 * a * b.transpose());
  sq.colwise() += a2;
  sq.rowwise() += b2.transpose();
  return (-sq / (2.0 * bandwidth * bandwidth)).array().exp();
}

struct ExactFitState {
  Mat train_x;
  Mat alpha;  // n x targets
  double bandwidth;
};

// Kernel ridge over a block of target columns. Exact mode keeps the dual
// coefficients; rff mode keeps primal coefficients on the feature map.
struct KernelRidge {
  std::shared_ptr<ExactFitState> exact;
  std::shared_ptr<RidgeModel> primal;

  Mat predict(const Mat& xs) const {
    if (exact) return gaussian_gram(xs, exact->train_x, exact->bandwidth) * exact->alpha;
    return primal->predict(xs);
  }
};

KernelRidge kernel_ridge_fit(const Mat& xs, const Mat& targets, const KernelConfig& cfg) {
  if (cfg.lambda <= 0.0) throw NumericalError("kernel ridge: lambda must be positive");
  if (cfg.bandwidth <= 0.0) throw NumericalError("kernel ridge: bandwidth must be positive");
  KernelRidge fit;
  const int n = static_cast<int>(xs.rows());
  if (cfg.mode == KernelConfig::Mode::exact_gaussian) {
    if (n > cfg.gram_cap) {
      throw SizingError("kernel ridge: exact Gram solve for n = " + std::to_string(n) +
                        " exceeds the cap " + std::to_string(cfg.gram_cap) +
                        "; use rff mode");
    }
    Mat gram = gaussian_gram(xs, xs, cfg.bandwidth);
    gram.diagonal().array() += cfg.lambda * static_cast<double>(n);
    Eigen::LLT<Mat> llt(gram);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("kernel ridge: Gram factorization failed");
    }
    fit.exact = std::make_shared<ExactFitState>();
    fit.exact->train_x = xs;
    fit.exact->alpha = llt.solve(targets);
    fit.exact->bandwidth = cfg.bandwidth;
  } else {
    const FeatureMap map = FeatureMap::rff_gaussian(static_cast<int>(xs.cols()), cfg.bandwidth,
                                                    cfg.rff_features, cfg.seed);
    fit.primal = std::make_shared<RidgeModel>(
        fit_ridge_model(map, xs, targets, cfg.lambda, /*intercept_unpenalized=*/false));
  }
  return fit;
}

}  // namespace

KernelInnerFit kbo_fit_inner(const Dataset& train, const StructuralModel& model,
                             const Vec& omega, const KernelConfig& cfg) {
  if (train.size() < 1) throw SizingError("kbo_fit_inner: empty training slice");
  const int d = model.dim_omega;
  const int q = model.dim_out;
  Mat targets(train.size(), q + d * q);
  targets.leftCols(q) = model.values(omega, train.z);
  targets.rightCols(d * q) = model.gradients(omega, train.z);

  auto ridge = std::make_shared<KernelRidge>(kernel_ridge_fit(train.x, targets, cfg));
  KernelInnerFit fit;
  fit.dim_omega = d;
  fit.dim_out = q;
  fit.h = [ridge, q](const Mat& xs) -> Mat { return ridge->predict(xs).leftCols(q); };
  fit.j = [ridge, q, d](const Mat& xs) -> Mat { return ridge->predict(xs).rightCols(d * q); };
  return fit;
}

Vec kbo_gradient(const Dataset& data, const StructuralModel& model, const Vec& omega,
                 const KernelConfig& cfg, std::uint64_t) {
  validate_dataset(data);
  // Full-sample plug-in, the form the kernel bilevel baseline actually runs:
  // inner solutions fit on all of the data and the score averaged in-sample.
  const KernelInnerFit fit = kbo_fit_inner(data, model, omega, cfg);

  const int d = model.dim_omega, q = model.dim_out;
  const Mat h = fit.h(data.x);
  const Mat j = fit.j(data.x);
  const Mat resid = h - data.y;
  Vec psi(d);
  for (int k = 0; k < d; ++k) {
    psi[k] = (resid.array() * j.middleCols(k * q, q).array()).rowwise().sum().mean();
  }
  return psi;
}

Vec regularized_target(const StructuralModel& model, const Vec& omega, const KernelConfig& cfg,
                       const GroundTruth& truth, int m_samples, std::uint64_t seed) {
  if (m_samples < 2) throw SizingError("regularized_target: need m_samples >= 2");
  const int d = model.dim_omega, q = model.dim_out;
  const Mat xs = truth.sample_x(m_samples, seed);
  const NuisanceSet oracle = truth.oracle_nuisances(omega);
  Mat h_star, j_star, m_star;
  oracle.evaluate(xs, h_star, j_star, m_star);

  Mat targets(m_samples, q + d * q);
  targets.leftCols(q) = h_star;
  targets.rightCols(d * q) = j_star;
  const KernelRidge ridge = kernel_ridge_fit(xs, targets, cfg);
  const Mat fitted = ridge.predict(xs);
  const Mat h_fit = fitted.leftCols(q);
  const Mat j_fit = fitted.rightCols(d * q);

  const Mat resid = h_fit - m_star;
  Vec psi(d);
  for (int k = 0; k < d; ++k) {
    psi[k] = (resid.array() * j_fit.middleCols(k * q, q).array()).rowwise().sum().mean();
  }
  return psi;
}

}  // namespace obigrad
