#pragma once

#include <cstdint>

#include "obigrad/dataset.hpp"
#include "obigrad/dgp.hpp"
#include "obigrad/types.hpp"

namespace obigrad {

// Fixed-regularization kernel baseline. The Gaussian kernel convention is
// k(x, x') = exp(-|x - x'|^2 / (2 bandwidth^2)); exact mode solves
// (K + n lambda I) alpha = targets, rff mode reduces to ridge regression on
// random Fourier features of the same kernel.
struct KernelConfig {
  enum class Mode { exact_gaussian, rff };
  Mode mode = Mode::exact_gaussian;
  double bandwidth = 0.5;
  int rff_features = 256;
  double lambda = 1e-2;
  std::uint64_t seed = 0;  // fixes the rff frequency draw
  int gram_cap = 2000;     // largest exact Gram solve allowed
};

// Kernel-ridge inner solution and Jacobian, (h_lambda, j_lambda); j is
// N x (d*q) like NuisanceSet::j.
struct KernelInnerFit {
  int dim_omega = 0;
  int dim_out = 1;
  std::function<Mat(const Mat& xs)> h;
  std::function<Mat(const Mat& xs)> j;
};

KernelInnerFit kbo_fit_inner(const Dataset& train, const StructuralModel& model,
                             const Vec& omega, const KernelConfig& cfg);

// Kernel plug-in hypergradient: fit (h_lambda, j_lambda) on the full sample
// and average <h_lambda(X) - Y, j_lambda,k(X)> over the same sample, the way
// the kernel bilevel baseline runs in practice. The seed parameter is kept
// for interface symmetry with the cross-fitted estimators and is unused.
Vec kbo_gradient(const Dataset& data, const StructuralModel& model, const Vec& omega,
                 const KernelConfig& cfg, std::uint64_t seed = 0);

// Regularized population gradient Psi_{omega,lambda}(P): kernel ridge on the
// noiseless analytic conditional means over an m-point design sample, then
// the sample average of <h_lambda(X) - m*(X), j_lambda,k(X)>.
Vec regularized_target(const StructuralModel& model, const Vec& omega, const KernelConfig& cfg,
                       const GroundTruth& truth, int m_samples, std::uint64_t seed);

}  // namespace obigrad
