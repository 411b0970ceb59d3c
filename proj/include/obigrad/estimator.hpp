#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "obigrad/dataset.hpp"
#include "obigrad/nuisance.hpp"
#include "obigrad/types.hpp"

#include <json.hpp>

namespace obigrad {

// Point estimate with covariance and coordinate-wise Wald intervals.
struct GradientReport {
  std::string method;  // plugin | obigrad | oracle_dr | kbo
  Vec omega;
  Vec psi_hat;
  Mat sigma_hat;
  Vec ci_lower;
  Vec ci_upper;
  double alpha = 0.05;
  int n_total = 0;
  std::uint64_t seed = 0;
  bool variance_clipped = false;

  nlohmann::json to_json() const;
};

// Doubly robust pseudo-outcome, coordinate k:
//   -<Y - g_omega(Z), j_k(X)> - <d_k g_omega(Z), m(X) - h(X)> + <j_k(X), m(X) - h(X)>.
Vec pseudo_outcome(const Observation& o, const NuisanceSet& eta, const StructuralModel& model,
                   const Vec& omega);

// Plug-in score, coordinate k: <h(X) - Y, j_k(X)>.
Vec plugin_score(const Observation& o, const NuisanceSet& eta);

// Batch forms: row i holds the d-dimensional score of observation i.
Mat pseudo_outcome_matrix(const Dataset& data, const NuisanceSet& eta,
                          const StructuralModel& model, const Vec& omega);
Mat plugin_score_matrix(const Dataset& data, const NuisanceSet& eta);

// Per-coordinate psi_k +- z_{1-alpha/2} sqrt(sigma_kk / n). Diagonal entries in
// [-1e-12, 0) are clipped to zero (flagged via *clipped); anything more
// negative is a covariance bug and throws.
std::pair<Vec, Vec> wald_ci(const Vec& psi_hat, const Mat& sigma_hat, int n_total, double alpha,
                            bool* clipped = nullptr);

// Two-fold cross-fitted estimators: nuisances trained on the opposite fold,
// scores averaged per fold with equal weights, covariance pooled across folds
// and centered at the combined estimate.
GradientReport dr_estimate(const Dataset& data, const StructuralModel& model, const Vec& omega,
                           const LearnerConfig& config, std::uint64_t seed, double alpha = 0.05);
GradientReport plugin_estimate(const Dataset& data, const StructuralModel& model,
                               const Vec& omega, const LearnerConfig& config, std::uint64_t seed,
                               double alpha = 0.05);

// One-fold variant (train on fold 1, average on fold 2), the form whose
// uniform-in-omega error the sweep diagnostic measures.
GradientReport dr_estimate_one_fold(const Dataset& data, const StructuralModel& model,
                                    const Vec& omega, const LearnerConfig& config,
                                    std::uint64_t seed, double alpha = 0.05);

// Full-sample average of the pseudo-outcome under supplied (typically true)
// nuisances; no folding.
GradientReport oracle_dr_estimate(const Dataset& data, const StructuralModel& model,
                                  const Vec& omega, const NuisanceSet& oracle,
                                  double alpha = 0.05);

// Population-bias diagnostics, estimated by sample averages over eval_x.
struct BiasDecomposition {
  Vec dr_term_hj;      // -<j_k - j*_k, h - h*>
  Vec dr_term_jm;      // +<j_k - j*_k, m - m*>
  Vec plugin_linear_h;  // <h - h*, j*_k>
  Vec plugin_linear_j;  // <h* - m*, v_k - j*_k>
  Vec plugin_cross;     // <h - h*, v_k - j*_k>

  Vec dr_total() const { return dr_term_hj + dr_term_jm; }
  Vec plugin_total() const { return plugin_linear_h + plugin_linear_j + plugin_cross; }
};

BiasDecomposition dr_population_bias(const NuisanceSet& eta, const NuisanceSet& oracle,
                                     const Mat& eval_x);
BiasDecomposition plugin_bias_decomposition(const NuisanceSet& eta, const NuisanceSet& oracle,
                                            const Mat& eval_x);

// L2(P_X) nuisance-error norms against an oracle on an evaluation sample.
// The Jacobian error is the per-coordinate RMS, sqrt(sum_k |j_k - j*_k|^2 / d),
// matching the reporting convention of the benchmark tables.
struct NuisanceErrors {
  double h_err = 0.0;
  double j_err = 0.0;
  double m_err = 0.0;
  double product_proxy() const { return j_err * (h_err + m_err); }
};
NuisanceErrors nuisance_errors(const NuisanceSet& eta, const NuisanceSet& oracle,
                               const Mat& eval_x);

}  // namespace obigrad
