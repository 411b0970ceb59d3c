#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "obigrad/estimator.hpp"
#include "obigrad/kbo.hpp"

namespace obigrad {

enum class EstimatorKind { plugin, obigrad, oracle_dr, kbo };

EstimatorKind estimator_kind_from_string(const std::string& name);
std::string to_string(EstimatorKind kind);

// Everything needed to evaluate the chosen gradient estimator at any omega.
// oracle_family supplies the true nuisances (required for oracle_dr); kernel
// configures the kbo baseline.
struct EstimatorChoice {
  EstimatorKind kind = EstimatorKind::obigrad;
  LearnerConfig learner;
  std::function<NuisanceSet(const Vec&)> oracle_family;
  KernelConfig kernel;
};

// Frozen-fold gradient oracle: folds are drawn once from the seed and design
// factorizations are cached, so repeated omega evaluations are cheap and the
// whole trajectory is deterministic. m-hat is fit once per fold.
class GradientEvaluator {
 public:
  GradientEvaluator(const Dataset& data, const StructuralModel& model, EstimatorChoice choice,
                    std::uint64_t seed);

  // Point estimate of Psi at omega under the frozen folds.
  Vec operator()(const Vec& omega) const;
  // One-fold variant (train fold 1, average fold 2); kbo is one-fold already.
  Vec one_fold(const Vec& omega) const;

 private:
  struct State;
  std::shared_ptr<const State> state_;
};

struct DescentConfig {
  double step_size = 0.1;
  int max_iters = 100;
  double tolerance = 0.0;  // tau_N: stop when |psi_hat| <= tolerance
  Vec omega_init;
};

struct DescentStep {
  int iter = 0;
  Vec omega;
  Vec psi_hat;
  double psi_norm = 0.0;
};

struct DescentResult {
  std::vector<DescentStep> trajectory;
  Vec final_omega;
  bool converged = false;
};

// omega_{t+1} = omega_t - eta * psi_hat(omega_t) with per-iterate nuisance
// refits on frozen folds. Aborts when |omega| exceeds 1e6.
DescentResult gradient_descent(const Dataset& data, const StructuralModel& model,
                               const DescentConfig& cfg, const EstimatorChoice& choice,
                               std::uint64_t seed);

void write_trajectory_csv(const DescentResult& result, const std::string& path);

struct RootResult {
  Vec omega_root;
  Mat a_hat;  // assembled affine map psi_hat(omega) = a_hat omega + b_hat
  Vec b_hat;
};

// For g_omega linear in omega: probes psi_hat at 0 and the unit vectors
// (shared folds, one nuisance refit per probe), then solves a_hat w = -b_hat.
RootResult affine_root_solve(const Dataset& data, const StructuralModel& model,
                             const EstimatorChoice& choice, std::uint64_t seed);

struct Certificate {
  double empirical_norm = 0.0;      // tau_N
  double uniform_error_bound = 0.0;  // s_N
  double population_bound = 0.0;     // tau_N + s_N
};

// tau_N = |psi_hat(omega_hat)| under the one-fold estimator (the form whose
// uniform error s_N bounds); the certificate is tau_N + s_N.
Certificate stationarity_certificate(const Vec& omega_hat, const Dataset& data,
                                     const StructuralModel& model, double s_n,
                                     const EstimatorChoice& choice, std::uint64_t seed);

}  // namespace obigrad
