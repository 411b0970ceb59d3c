#include "obigrad/nuisance.hpp"

#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/QR>

namespace obigrad {

FeatureMap FeatureMap::fourier_sum(int n_frequencies, bool include_linear) {
  if (n_frequencies < 1) throw SizingError("fourier_sum needs at least one frequency");
  FeatureMap map;
  map.kind_ = Kind::fourier_sum;
  map.n_frequencies_ = n_frequencies;
  map.fourier_linear_ = include_linear;
  map.dim_ = 2 * n_frequencies + 1 + (include_linear ? 1 : 0);
  map.intercept_col_ = 0;
  return map;
}

FeatureMap FeatureMap::observable_sa() {
  FeatureMap map;
  map.kind_ = Kind::observable_sa;
  map.dim_ = 9;
  map.input_dim_ = 2;
  map.intercept_col_ = 0;
  return map;
}

FeatureMap FeatureMap::rff_gaussian(int input_dim, double bandwidth, int n_features,
                                    std::uint64_t seed) {
  if (input_dim < 1) throw ShapeError("rff_gaussian: input_dim must be positive");
  if (bandwidth <= 0.0) throw NumericalError("rff_gaussian: bandwidth must be positive");
  if (n_features < 1) throw SizingError("rff_gaussian: need at least one feature");
  FeatureMap map;
  map.kind_ = Kind::rff_gaussian;
  map.dim_ = n_features;
  map.input_dim_ = input_dim;
  Rng rng(seed);
  map.rff_w_.resize(n_features, input_dim);
  for (int i = 0; i < n_features; ++i) {
    for (int c = 0; c < input_dim; ++c) map.rff_w_(i, c) = rng.normal() / bandwidth;
  }
  map.rff_b_.resize(n_features);
  for (int i = 0; i < n_features; ++i) {
    map.rff_b_[i] = rng.uniform(0.0, 6.283185307179586476925286766559);
  }
  map.rff_scale_ = std::sqrt(2.0 / n_features);
  return map;
}

FeatureMap FeatureMap::custom_basis(std::vector<std::function<double(const Vec&)>> basis,
                                    bool include_intercept) {
  if (basis.empty()) throw SizingError("custom_basis: empty basis");
  FeatureMap map;
  map.kind_ = Kind::custom_basis;
  map.intercept_col_ = include_intercept ? 0 : -1;
  map.dim_ = static_cast<int>(basis.size()) + (include_intercept ? 1 : 0);
  map.basis_ = std::make_shared<const std::vector<std::function<double(const Vec&)>>>(
      std::move(basis));
  return map;
}

Vec FeatureMap::operator()(const Vec& x) const {
  if (input_dim_ >= 0 && x.size() != input_dim_) {
    throw ShapeError("feature map expects input dimension " + std::to_string(input_dim_) +
                     ", got " + std::to_string(x.size()));
  }
  Vec out(dim_);
  switch (kind_) {
    case Kind::fourier_sum: {
      const double s = x.sum();
      out[0] = 1.0;
      for (int f = 1; f <= n_frequencies_; ++f) {
        out[2 * f - 1] = std::sin(f * s);
        out[2 * f] = std::cos(f * s);
      }
      if (fourier_linear_) out[2 * n_frequencies_ + 1] = s;
      break;
    }
    case Kind::observable_sa: {
      const double s = x[0], a = x[1];
      const double sin_s = std::sin(s), cos_s = std::cos(s);
      out << 1.0, s, s * s, sin_s, cos_s, a, a * s, a * sin_s, a * cos_s;
      break;
    }
    case Kind::rff_gaussian: {
      out = (rff_scale_ * ((rff_w_ * x + rff_b_).array().cos())).matrix();
      break;
    }
    case Kind::custom_basis: {
      int c = 0;
      if (intercept_col_ == 0) out[c++] = 1.0;
      for (const auto& fn : *basis_) out[c++] = fn(x);
      break;
    }
  }
  return out;
}

Mat FeatureMap::matrix(const Mat& xs) const {
  if (input_dim_ >= 0 && xs.cols() != input_dim_) {
    throw ShapeError("feature map expects input dimension " + std::to_string(input_dim_) +
                     ", got " + std::to_string(xs.cols()));
  }
  const Eigen::Index n = xs.rows();
  Mat out(n, dim_);
  switch (kind_) {
    case Kind::fourier_sum: {
      const Vec s = xs.rowwise().sum();
      out.col(0).setOnes();
      for (int f = 1; f <= n_frequencies_; ++f) {
        out.col(2 * f - 1) = (f * s.array()).sin();
        out.col(2 * f) = (f * s.array()).cos();
      }
      if (fourier_linear_) out.col(2 * n_frequencies_ + 1) = s;
      break;
    }
    case Kind::observable_sa: {
      const auto s = xs.col(0).array();
      const auto a = xs.col(1).array();
      out.col(0).setOnes();
      out.col(1) = s;
      out.col(2) = s.square();
      out.col(3) = s.sin();
      out.col(4) = s.cos();
      out.col(5) = a;
      out.col(6) = a * s;
      out.col(7) = a * s.sin();
      out.col(8) = a * s.cos();
      break;
    }
    case Kind::rff_gaussian: {
      out = rff_scale_ *
            ((xs * rff_w_.transpose()).rowwise() + rff_b_.transpose()).array().cos().matrix();
      break;
    }
    case Kind::custom_basis: {
      for (Eigen::Index i = 0; i < n; ++i) out.row(i) = (*this)(xs.row(i).transpose()).transpose();
      break;
    }
  }
  return out;
}

RidgeSolution ridge_fit(const Mat& design, const Mat& targets, double lambda,
                        bool intercept_unpenalized, int intercept_col) {
  if (design.rows() != targets.rows()) {
    throw ShapeError("ridge_fit: design has " + std::to_string(design.rows()) +
                     " rows, targets have " + std::to_string(targets.rows()));
  }
  if (design.rows() < 1) throw SizingError("ridge_fit: empty design");
  if (lambda < 0.0) throw NumericalError("ridge_fit: negative ridge parameter");

  RidgeSolution sol;
  if (lambda == 0.0) {
    // Minimum-norm least squares through a rank-revealing factorization.
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(design);
    sol.beta = cod.solve(targets);
    sol.condition_warning = cod.rank() < design.cols();
    return sol;
  }
  Mat normal = design.transpose() * design;
  const double penalty = lambda * static_cast<double>(design.rows());
  normal.diagonal().array() += penalty;
  if (intercept_unpenalized && intercept_col >= 0 && intercept_col < design.cols()) {
    normal(intercept_col, intercept_col) -= penalty;
  }
  const Mat xty = design.transpose() * targets;
  Eigen::LLT<Mat> llt(normal);
  if (llt.info() != Eigen::Success) {
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(normal);
    sol.beta = cod.solve(xty);
    sol.condition_warning = true;
    return sol;
  }
  sol.beta = llt.solve(xty);
  return sol;
}

RidgeModel fit_ridge_model(const FeatureMap& map, const Mat& xs, const Mat& targets,
                           double lambda, bool intercept_unpenalized) {
  RidgeModel model;
  model.map = map;
  model.lambda = lambda;
  const Mat phi = map.matrix(xs);
  RidgeSolution sol =
      ridge_fit(phi, targets, lambda, intercept_unpenalized, map.intercept_column());
  model.beta = std::move(sol.beta);
  model.condition_warning = sol.condition_warning;
  return model;
}

struct FoldLearner::State {
  StructuralModel model;
  LearnerConfig config;
  Mat z_train;
  Mat phi;              // n x p
  Eigen::LLT<Mat> llt;  // factor of the penalized normal matrix
  bool use_llt = true;
  bool condition_warning = false;
  Mat m_beta;  // outcome regression, omega-independent

  Mat solve(const Mat& targets) {
    if (use_llt) return llt.solve(phi.transpose() * targets);
    RidgeSolution sol = ridge_fit(phi, targets, config.lambda, config.intercept_unpenalized,
                                  config.map.intercept_column());
    condition_warning |= sol.condition_warning;
    return sol.beta;
  }
};

FoldLearner::FoldLearner(const Dataset& train, const StructuralModel& model,
                         LearnerConfig config) {
  if (train.size() < 1) throw SizingError("FoldLearner: empty training slice");
  state_ = std::make_shared<State>();
  state_->model = model;
  state_->config = std::move(config);
  state_->z_train = train.z;
  state_->phi = state_->config.map.matrix(train.x);

  const double penalty = state_->config.lambda * static_cast<double>(train.size());
  Mat normal = state_->phi.transpose() * state_->phi;
  normal.diagonal().array() += penalty;
  const int icol = state_->config.map.intercept_column();
  if (state_->config.intercept_unpenalized && icol >= 0) {
    normal(icol, icol) -= penalty;
  }
  if (state_->config.lambda > 0.0) {
    state_->llt.compute(normal);
    state_->use_llt = state_->llt.info() == Eigen::Success;
  } else {
    state_->use_llt = false;
  }
  state_->m_beta = state_->solve(train.y);
}

Mat FoldLearner::fit_coefficients(const Vec& omega) const {
  auto st = state_;
  const int d = st->model.dim_omega;
  const int q = st->model.dim_out;
  const Mat h_targets = st->model.values(omega, st->z_train);
  const Mat j_targets = st->model.gradients(omega, st->z_train);
  Mat betas(st->phi.cols(), q + d * q + q);
  betas.leftCols(q) = st->solve(h_targets);
  betas.middleCols(q, d * q) = st->solve(j_targets);
  betas.rightCols(q) = st->m_beta;
  return betas;
}

const FeatureMap& FoldLearner::map() const { return state_->config.map; }

bool FoldLearner::condition_warning() const { return state_->condition_warning; }

NuisanceSet FoldLearner::fit(const Vec& omega) const {
  auto st = state_;
  const int d = st->model.dim_omega;
  const int q = st->model.dim_out;
  auto betas = std::make_shared<Mat>(fit_coefficients(omega));

  const FeatureMap map = st->config.map;
  NuisanceSet eta;
  eta.dim_omega = d;
  eta.dim_out = q;
  eta.h = [map, betas, q](const Mat& xs) -> Mat { return map.matrix(xs) * betas->leftCols(q); };
  eta.j = [map, betas, q, d](const Mat& xs) -> Mat {
    return map.matrix(xs) * betas->middleCols(q, d * q);
  };
  eta.m = [map, betas, q](const Mat& xs) -> Mat { return map.matrix(xs) * betas->rightCols(q); };
  eta.joint = [map, betas, q, d](const Mat& xs, Mat& h_out, Mat& j_out, Mat& m_out) {
    const Mat all = map.matrix(xs) * (*betas);
    h_out = all.leftCols(q);
    j_out = all.middleCols(q, d * q);
    m_out = all.rightCols(q);
  };
  return eta;
}

NuisanceSet fit_nuisances(const Dataset& train, const StructuralModel& model, const Vec& omega,
                          const LearnerConfig& config) {
  return FoldLearner(train, model, config).fit(omega);
}

}  // namespace obigrad
