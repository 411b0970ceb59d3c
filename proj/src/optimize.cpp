#include "obigrad/optimize.hpp"

#include <cmath>
#include <fstream>

#include <Eigen/LU>
#include <Eigen/SVD>

namespace obigrad {

EstimatorKind estimator_kind_from_string(const std::string& name) {
  if (name == "plugin" || name == "pi") return EstimatorKind::plugin;
  if (name == "obigrad" || name == "dr") return EstimatorKind::obigrad;
  if (name == "oracle" || name == "oracle_dr") return EstimatorKind::oracle_dr;
  if (name == "kbo") return EstimatorKind::kbo;
  throw DataError("unknown estimator '" + name + "'");
}

std::string to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::plugin: return "plugin";
    case EstimatorKind::obigrad: return "obigrad";
    case EstimatorKind::oracle_dr: return "oracle_dr";
    case EstimatorKind::kbo: return "kbo";
  }
  return "unknown";
}

struct GradientEvaluator::State {
  StructuralModel model;
  EstimatorChoice choice;
  std::uint64_t seed = 0;
  Dataset full;
  Dataset fold1, fold2;
  // cached ridge learners (plugin / obigrad)
  std::shared_ptr<FoldLearner> learner1, learner2;  // trained on fold1 / fold2
};

GradientEvaluator::GradientEvaluator(const Dataset& data, const StructuralModel& model,
                                     EstimatorChoice choice, std::uint64_t seed) {
  validate_dataset(data);
  auto st = std::make_shared<State>();
  st->model = model;
  st->choice = std::move(choice);
  st->seed = seed;
  st->full = data;
  if (st->choice.kind == EstimatorKind::oracle_dr && !st->choice.oracle_family) {
    throw DataError("oracle estimator requested without oracle nuisances");
  }
  if (st->choice.kind != EstimatorKind::oracle_dr) {
    const FoldSplit split = split_folds(data, seed);
    st->fold1 = data.subset(split.fold1);
    st->fold2 = data.subset(split.fold2);
    if (st->choice.kind != EstimatorKind::kbo) {
      st->learner1 = std::make_shared<FoldLearner>(st->fold1, model, st->choice.learner);
      st->learner2 = std::make_shared<FoldLearner>(st->fold2, model, st->choice.learner);
    }
  }
  state_ = st;
}

namespace {

Vec mean_score(const Mat& scores) { return scores.colwise().mean().transpose(); }

}  // namespace

Vec GradientEvaluator::operator()(const Vec& omega) const {
  const State& st = *state_;
  switch (st.choice.kind) {
    case EstimatorKind::oracle_dr: {
      const NuisanceSet oracle = st.choice.oracle_family(omega);
      return mean_score(pseudo_outcome_matrix(st.full, oracle, st.model, omega));
    }
    case EstimatorKind::kbo:
      return kbo_gradient(st.full, st.model, omega, st.choice.kernel, st.seed);
    case EstimatorKind::obigrad: {
      const Vec psi1 = mean_score(
          pseudo_outcome_matrix(st.fold1, st.learner2->fit(omega), st.model, omega));
      const Vec psi2 = mean_score(
          pseudo_outcome_matrix(st.fold2, st.learner1->fit(omega), st.model, omega));
      return 0.5 * (psi1 + psi2);
    }
    case EstimatorKind::plugin: {
      const Vec psi1 = mean_score(plugin_score_matrix(st.fold1, st.learner2->fit(omega)));
      const Vec psi2 = mean_score(plugin_score_matrix(st.fold2, st.learner1->fit(omega)));
      return 0.5 * (psi1 + psi2);
    }
  }
  throw DataError("unreachable estimator kind");
}

Vec GradientEvaluator::one_fold(const Vec& omega) const {
  const State& st = *state_;
  switch (st.choice.kind) {
    case EstimatorKind::oracle_dr:
      return (*this)(omega);
    case EstimatorKind::kbo:
      return kbo_gradient(st.full, st.model, omega, st.choice.kernel, st.seed);
    case EstimatorKind::obigrad:
      return mean_score(
          pseudo_outcome_matrix(st.fold2, st.learner1->fit(omega), st.model, omega));
    case EstimatorKind::plugin:
      return mean_score(plugin_score_matrix(st.fold2, st.learner1->fit(omega)));
  }
  throw DataError("unreachable estimator kind");
}

DescentResult gradient_descent(const Dataset& data, const StructuralModel& model,
                               const DescentConfig& cfg, const EstimatorChoice& choice,
                               std::uint64_t seed) {
  if (cfg.step_size <= 0.0) throw NumericalError("gradient_descent: step size must be positive");
  if (cfg.max_iters < 1) throw SizingError("gradient_descent: max_iters must be >= 1");
  if (cfg.omega_init.size() != model.dim_omega) {
    throw ShapeError("gradient_descent: omega_init has dimension " +
                     std::to_string(cfg.omega_init.size()) + ", model expects " +
                     std::to_string(model.dim_omega));
  }
  const GradientEvaluator gradient(data, model, choice, seed);
  DescentResult result;
  Vec omega = cfg.omega_init;
  for (int t = 0; t < cfg.max_iters; ++t) {
    if (omega.norm() > 1e6) {
      throw NumericalError("gradient_descent: iterate diverged at step " + std::to_string(t));
    }
    const Vec psi = gradient(omega);
    result.trajectory.push_back({t, omega, psi, psi.norm()});
    if (psi.norm() <= cfg.tolerance) {
      result.converged = true;
      break;
    }
    omega -= cfg.step_size * psi;
  }
  result.final_omega = result.converged ? result.trajectory.back().omega : omega;
  return result;
}

void write_trajectory_csv(const DescentResult& result, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write trajectory CSV: " + path);
  const int d = result.final_omega.size() ? static_cast<int>(result.final_omega.size()) : 0;
  out << "iter";
  for (int k = 0; k < d; ++k) out << ",omega" << k;
  for (int k = 0; k < d; ++k) out << ",psi_hat" << k;
  out << ",psi_hat_norm\n";
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    out << ',' << buf;
  };
  for (const DescentStep& step : result.trajectory) {
    out << step.iter;
    for (int k = 0; k < d; ++k) put(step.omega[k]);
    for (int k = 0; k < d; ++k) put(step.psi_hat[k]);
    put(step.psi_norm);
    out << "\n";
  }
}

RootResult affine_root_solve(const Dataset& data, const StructuralModel& model,
                             const EstimatorChoice& choice, std::uint64_t seed) {
  const int d = model.dim_omega;
  const GradientEvaluator gradient(data, model, choice, seed);
  RootResult result;
  result.b_hat = gradient(Vec::Zero(d));
  result.a_hat.resize(d, d);
  for (int k = 0; k < d; ++k) {
    result.a_hat.col(k) = gradient(Vec::Unit(d, k)) - result.b_hat;
  }
  const Eigen::JacobiSVD<Mat> svd(result.a_hat,
                                  Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double smin = svd.singularValues().minCoeff();
  const double smax = svd.singularValues().maxCoeff();
  if (smin <= 0.0 || smax / smin > 1e10) {
    throw NumericalError("affine_root_solve: assembled system is ill-conditioned");
  }
  result.omega_root = svd.solve(-result.b_hat);
  return result;
}

Certificate stationarity_certificate(const Vec& omega_hat, const Dataset& data,
                                     const StructuralModel& model, double s_n,
                                     const EstimatorChoice& choice, std::uint64_t seed) {
  if (s_n < 0.0) throw NumericalError("stationarity_certificate: s_n must be nonnegative");
  const GradientEvaluator gradient(data, model, choice, seed);
  Certificate cert;
  cert.empirical_norm = gradient.one_fold(omega_hat).norm();
  cert.uniform_error_bound = s_n;
  cert.population_bound = cert.empirical_norm + s_n;
  return cert;
}

}  // namespace obigrad
