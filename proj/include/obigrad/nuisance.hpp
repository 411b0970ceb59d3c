#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "obigrad/types.hpp"

namespace obigrad {

// Deterministic feature expansions used by the ridge nuisance learners.
class FeatureMap {
 public:
  enum class Kind { fourier_sum, observable_sa, rff_gaussian, custom_basis };

  // [1, sin(s), cos(s), ..., sin(F s), cos(F s)] with s = sum of coordinates;
  // include_linear appends s itself, needed when the regression targets have
  // a linear component.
  static FeatureMap fourier_sum(int n_frequencies = 8, bool include_linear = false);
  // Fixed basis in (S, A): {1, S, S^2, sin S, cos S, A, AS, A sin S, A cos S}.
  static FeatureMap observable_sa();
  // sqrt(2/M) cos(w_i . x + b_i) with w_i ~ N(0, I / bandwidth^2); the draw is
  // fixed at construction from the seed.
  static FeatureMap rff_gaussian(int input_dim, double bandwidth, int n_features,
                                 std::uint64_t seed);
  static FeatureMap custom_basis(std::vector<std::function<double(const Vec&)>> basis,
                                 bool include_intercept);

  Kind kind() const { return kind_; }
  int dim() const { return dim_; }
  int input_dim() const { return input_dim_; }  // -1 when any dimension works
  bool includes_intercept() const { return intercept_col_ >= 0; }
  int intercept_column() const { return intercept_col_; }

  Vec operator()(const Vec& x) const;
  Mat matrix(const Mat& xs) const;

  // Default-constructed maps are the 8-frequency fourier_sum.
  FeatureMap() = default;

 private:
  Kind kind_ = Kind::fourier_sum;
  int dim_ = 17;
  int input_dim_ = -1;
  int intercept_col_ = 0;
  int n_frequencies_ = 8;
  bool fourier_linear_ = false;
  Mat rff_w_;  // M x input_dim
  Vec rff_b_;
  double rff_scale_ = 0.0;
  std::shared_ptr<const std::vector<std::function<double(const Vec&)>>> basis_;
};

struct RidgeSolution {
  Mat beta;  // features x targets
  bool condition_warning = false;
};

// Solves (Phi' Phi + lambda n Lambda) beta = Phi' T jointly over target
// columns; Lambda is the identity with a zero at the intercept position when
// the intercept is unpenalized. At lambda = 0 a rank-revealing factorization
// provides the minimum-norm solution and flags ill conditioning.
RidgeSolution ridge_fit(const Mat& design, const Mat& targets, double lambda,
                        bool intercept_unpenalized, int intercept_col = 0);

struct RidgeModel {
  FeatureMap map;
  Mat beta;
  double lambda = 0.0;
  bool condition_warning = false;

  Mat predict(const Mat& xs) const { return map.matrix(xs) * beta; }
};

RidgeModel fit_ridge_model(const FeatureMap& map, const Mat& xs, const Mat& targets,
                           double lambda, bool intercept_unpenalized);

struct LearnerConfig {
  FeatureMap map = FeatureMap::fourier_sum();
  double lambda = 1e-6;
  bool intercept_unpenalized = true;
};

// Ridge learner bound to one training fold. The design matrix and its
// normal-equation factorization are built once; fits for new omegas are
// single triangular solves, and the outcome regression m is shared.
class FoldLearner {
 public:
  FoldLearner(const Dataset& train, const StructuralModel& model, LearnerConfig config);

  NuisanceSet fit(const Vec& omega) const;
  // Stacked ridge coefficients [beta_h | beta_j | beta_m], features x
  // (q + d*q + q); the NuisanceSet returned by fit() predicts with these.
  Mat fit_coefficients(const Vec& omega) const;
  const FeatureMap& map() const;
  bool condition_warning() const;

 private:
  struct State;
  std::shared_ptr<State> state_;
};

// h = ridge fit of g_omega(Z) on features(X), j = joint ridge fit of the
// d*q gradient entries, m = ridge fit of Y; all on the same training slice.
NuisanceSet fit_nuisances(const Dataset& train, const StructuralModel& model, const Vec& omega,
                          const LearnerConfig& config);

}  // namespace obigrad
