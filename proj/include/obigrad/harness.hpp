#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "obigrad/dgp.hpp"
#include "obigrad/estimator.hpp"
#include "obigrad/kbo.hpp"
#include "obigrad/optimize.hpp"

namespace obigrad {

// Monte Carlo experiment configuration. Defaults come from the design name
// (see default_config); a flat key = value file overrides individual fields.
struct ExperimentConfig {
  std::string design;  // iv_gradient, iv_wald, iv_kbo, iv_root,
                       // fqe_gradient, fqe_wald, fqe_root, fqe_kbo
  std::vector<int> sample_sizes;
  int replications = 100;
  std::vector<std::string> estimators{"plugin", "obigrad", "oracle"};
  double alpha = 0.05;

  // ridge nuisance learner
  std::string feature_map = "auto";  // fourier_sum | fourier_linear | observable_sa
  int n_frequencies = 8;
  double ridge_lambda = 1e-6;
  int eval_samples = 100000;  // L2(P_X) diagnostics sample

  // kbo baseline
  std::vector<double> kbo_lambda_grid;
  double kbo_bandwidth = 0.5;
  std::string kbo_mode = "auto";  // exact | rff
  int kbo_rff_features = 256;
  int kbo_target_samples = 3000;  // population-target sample size
  double kbo_fixed_lambda = 1e-2;
  double kbo_decay_coef = 0.05;
  double kbo_decay_exponent = 0.6;

  int quadrature_nodes = 64;
  std::optional<Vec> omega_eval;  // defaults to the design's omega_0

  // omega-grid sweep
  int sweep_grid_radius_axes = 1;  // grid = center +- radius along each axis
  double sweep_radius = 0.25;

  std::uint64_t master_seed = 20240801;
  std::string out_dir = "results";
  int workers = 0;  // 0: OBIGRAD_WORKERS env, else hardware concurrency
};

ExperimentConfig default_config(const std::string& design);
// Parses `key = value` lines ('#' comments); unknown keys are errors.
ExperimentConfig load_config_file(const std::string& path, ExperimentConfig base);

// Resolved design objects shared by all replications of an experiment.
struct DesignContext {
  StructuralModel model;
  GroundTruth truth;
  Vec omega_eval;
  Vec psi_true;
  LearnerConfig learner;
  std::function<Dataset(int n, std::uint64_t seed)> sample;
  bool is_iv = false;
};
DesignContext resolve_design(const ExperimentConfig& config);

struct EstimateRecord {
  bool ok = false;
  std::string error;
  Vec psi_hat;
  Vec ci_lower, ci_upper;
  Vec sigma_diag;
};

struct ReplicationRecord {
  int n = 0;
  int rep = 0;
  Vec psi_true;
  std::map<std::string, EstimateRecord> estimates;
  bool has_nuisance_diag = false;
  double h_err = 0.0, j_err = 0.0, m_err = 0.0, product_bias = 0.0;
};

// One replication of a gradient/Wald experiment: derives the stream seed from
// (master, N, rep), samples, runs each configured estimator, and records
// nuisance diagnostics against the oracle on the shared evaluation sample.
ReplicationRecord run_replication(const ExperimentConfig& config, const DesignContext& design,
                                  const Mat& eval_x, int n, int rep);

struct CellSummary {
  std::string estimator;
  int n = 0;
  int replications = 0;
  int excluded = 0;
  double rmse = 0.0, rmse_err = 0.0;
  double bias_norm = 0.0;
  double coverage = 0.0, coverage_lo = 0.0, coverage_hi = 0.0;
  double avg_length = 0.0, avg_length_err = 0.0;
  double stud_mean = 0.0, stud_sd = 0.0, stud_q025 = 0.0, stud_median = 0.0, stud_q975 = 0.0;
  double h_err = 0.0, j_err = 0.0, m_err = 0.0, product_bias = 0.0;
  bool has_mc_err = true;  // false for single-replication cells
};

std::vector<CellSummary> aggregate(const std::vector<ReplicationRecord>& records,
                                   const std::vector<std::string>& estimators);

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<ReplicationRecord> records;
  std::vector<CellSummary> cells;
};

const CellSummary& find_cell(const ExperimentResult& result, const std::string& estimator, int n);

// Gradient / Wald experiments (designs *_gradient, *_wald).
ExperimentResult run_gradient_experiment(const ExperimentConfig& config);

// KBO decomposition experiment (designs *_kbo).
struct KboRow {
  double lambda = 0.0;
  double kbo_total = 0.0, kbo_total_err = 0.0;
  double reg_bias = 0.0;
  double kbo_estimation = 0.0, kbo_estimation_err = 0.0;
  double obigrad = 0.0, obigrad_err = 0.0;
  double plugin = 0.0, plugin_err = 0.0;
  double oracle = 0.0;
};
struct KboResult {
  ExperimentConfig config;
  std::vector<KboRow> rows;
};
KboResult run_kbo_experiment(const ExperimentConfig& config);

// Root-estimation experiment (designs *_root). KBO columns are added for IV
// when kbo estimators are configured.
struct RootCell {
  std::string estimator;
  int n = 0;
  int replications = 0;
  int excluded = 0;
  double rmse = 0.0, rmse_err = 0.0;
  double bias_norm = 0.0;
};
struct KboPopulationRoot {
  double lambda = 0.0;
  double population_root = 0.0;
  double bias = 0.0;
};
struct RootResultTable {
  ExperimentConfig config;
  std::vector<RootCell> cells;
  std::vector<KboPopulationRoot> population_roots;
};
RootResultTable run_root_experiment(const ExperimentConfig& config);
const RootCell& find_root_cell(const RootResultTable& result, const std::string& estimator,
                               int n);

// Uniform-error sweep: per replication, sup over an omega grid of
// |psi_hat_one_fold - psi| for each N; reports the mean sup error and the
// log-log slope against N.
struct SweepRow {
  int n = 0;
  double mean_sup_error = 0.0;
  double mc_err = 0.0;
  double mean_fixed_error = 0.0;  // error at the grid center
};
struct SweepResult {
  ExperimentConfig config;
  std::vector<SweepRow> rows;
  double loglog_slope = 0.0;
  int grid_size = 0;
};
SweepResult run_sweep(const ExperimentConfig& config);

// CSV / JSON emission; file contents are deterministic given the result
// (numbers formatted to 6 significant digits).
void emit_reports(const ExperimentResult& result, const std::string& out_dir);
void emit_reports(const KboResult& result, const std::string& out_dir);
void emit_reports(const RootResultTable& result, const std::string& out_dir);
void emit_reports(const SweepResult& result, const std::string& out_dir);

// Worker-pool map over [0, count); results ordered by index regardless of
// scheduling. workers <= 0 consults OBIGRAD_WORKERS, then the hardware.
void parallel_for(int count, int workers, const std::function<void(int)>& body);
int resolve_workers(int configured);

}  // namespace obigrad
