#include "obigrad/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace obigrad {

namespace {

constexpr std::uint64_t kEvalSampleTag = 0x45564153;   // evaluation sample stream
constexpr std::uint64_t kKboTargetTag = 0x4b425054;    // population-target stream
constexpr std::uint64_t kRffTag = 0x52464631;          // per-replication rff stream

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto begin = item.find_first_not_of(" \t");
    if (begin == std::string::npos) continue;
    const auto end = item.find_last_not_of(" \t");
    items.push_back(item.substr(begin, end - begin + 1));
  }
  return items;
}

double quantile(std::vector<double> sorted, double p) {
  if (sorted.empty()) return 0.0;
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

void wilson_interval(int successes, int trials, double& lo, double& hi) {
  if (trials == 0) {
    lo = 0.0;
    hi = 1.0;
    return;
  }
  const double z = 1.959963984540054;  // 97.5% normal quantile
  const double n = trials;
  const double phat = static_cast<double>(successes) / n;
  const double denom = 1.0 + z * z / n;
  const double center = (phat + z * z / (2.0 * n)) / denom;
  const double half = z * std::sqrt(phat * (1.0 - phat) / n + z * z / (4.0 * n * n)) / denom;
  lo = std::max(0.0, center - half);
  hi = std::min(1.0, center + half);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string fmt6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::string& header) : out_(path) {
    if (!out_) throw DataError("cannot write CSV: " + path);
    out_ << header << "\n";
  }
  CsvWriter& field(const std::string& v) {
    sep();
    out_ << v;
    return *this;
  }
  CsvWriter& field(int v) {
    sep();
    out_ << v;
    return *this;
  }
  CsvWriter& field(double v) {
    sep();
    out_ << fmt6(v);
    return *this;
  }
  void endrow() {
    out_ << "\n";
    first_ = true;
  }

 private:
  void sep() {
    if (!first_) out_ << ',';
    first_ = false;
  }
  std::ofstream out_;
  bool first_ = true;
};

}  // namespace

int resolve_workers(int configured) {
  if (configured > 0) return configured;
  if (const char* env = std::getenv("OBIGRAD_WORKERS")) {
    const int parsed = std::atoi(env);
    if (parsed > 0) return parsed;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

void parallel_for(int count, int workers, const std::function<void(int)>& body) {
  workers = std::min(resolve_workers(workers), count);
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

ExperimentConfig default_config(const std::string& design) {
  ExperimentConfig config;
  config.design = design;
  const bool iv = design.rfind("iv", 0) == 0;
  const bool fqe = design.rfind("fqe", 0) == 0;
  if (!iv && !fqe) throw DataError("unknown design '" + design + "'");

  if (design == "iv_gradient" || design == "iv_wald" || design == "fqe_gradient" ||
      design == "fqe_wald") {
    config.sample_sizes = {200, 400, 800, 1600, 3200};
  } else if (design == "iv_root") {
    config.sample_sizes = {100, 200, 400, 800, 1600};
    config.estimators = {"plugin", "obigrad", "oracle", "kbo_fixed", "kbo_decay"};
    config.kbo_target_samples = 2500;
    // j* is linear in x here, so the learner carries a linear term; one
    // trigonometric frequency keeps the 50-point fold fits well conditioned.
    config.feature_map = "fourier_linear";
    config.n_frequencies = 1;
    config.kbo_bandwidth = 1.5;
  } else if (design == "fqe_root") {
    config.sample_sizes = {200, 400, 800, 1600, 3200};
  } else if (design == "iv_kbo" || design == "fqe_kbo") {
    config.sample_sizes = {600};
    config.kbo_lambda_grid = {1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1};
    if (design == "fqe_kbo") {
      config.kbo_mode = "rff";
      config.kbo_bandwidth = 0.35;
      config.kbo_target_samples = 12000;
    } else {
      config.kbo_mode = "exact";
      config.kbo_bandwidth = 0.5;
      config.kbo_target_samples = 3000;
    }
  } else {
    throw DataError("unknown design '" + design + "'");
  }
  return config;
}

ExperimentConfig load_config_file(const std::string& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos) {
        throw DataError("config line " + std::to_string(line_no) + " is not key = value");
      }
      continue;
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "design") {
        base = default_config(value);
      } else if (key == "sample_sizes") {
        base.sample_sizes.clear();
        for (const auto& s : split_list(value)) base.sample_sizes.push_back(std::stoi(s));
      } else if (key == "replications") {
        base.replications = std::stoi(value);
      } else if (key == "estimators") {
        base.estimators = split_list(value);
      } else if (key == "alpha") {
        base.alpha = std::stod(value);
      } else if (key == "feature_map") {
        base.feature_map = value;
      } else if (key == "n_frequencies") {
        base.n_frequencies = std::stoi(value);
      } else if (key == "ridge_lambda") {
        base.ridge_lambda = std::stod(value);
      } else if (key == "eval_samples") {
        base.eval_samples = std::stoi(value);
      } else if (key == "kbo_lambda_grid") {
        base.kbo_lambda_grid.clear();
        for (const auto& s : split_list(value)) base.kbo_lambda_grid.push_back(std::stod(s));
      } else if (key == "kbo_bandwidth") {
        base.kbo_bandwidth = std::stod(value);
      } else if (key == "kbo_mode") {
        base.kbo_mode = value;
      } else if (key == "kbo_rff_features") {
        base.kbo_rff_features = std::stoi(value);
      } else if (key == "kbo_target_samples") {
        base.kbo_target_samples = std::stoi(value);
      } else if (key == "kbo_fixed_lambda") {
        base.kbo_fixed_lambda = std::stod(value);
      } else if (key == "kbo_decay_coef") {
        base.kbo_decay_coef = std::stod(value);
      } else if (key == "kbo_decay_exponent") {
        base.kbo_decay_exponent = std::stod(value);
      } else if (key == "quadrature_nodes") {
        base.quadrature_nodes = std::stoi(value);
      } else if (key == "omega_eval") {
        const auto parts = split_list(value);
        Vec omega(static_cast<Eigen::Index>(parts.size()));
        for (std::size_t i = 0; i < parts.size(); ++i) omega[i] = std::stod(parts[i]);
        base.omega_eval = omega;
      } else if (key == "sweep_radius") {
        base.sweep_radius = std::stod(value);
      } else if (key == "master_seed") {
        base.master_seed = std::stoull(value);
      } else if (key == "out_dir") {
        base.out_dir = value;
      } else if (key == "workers") {
        base.workers = std::stoi(value);
      } else {
        throw DataError("unknown config key '" + key + "'");
      }
    } catch (const DataError&) {
      throw;
    } catch (const std::exception& ex) {
      throw DataError("config line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return base;
}

DesignContext resolve_design(const ExperimentConfig& config) {
  DesignContext ctx;
  const std::string& name = config.design;
  ctx.is_iv = name.rfind("iv", 0) == 0;
  if (ctx.is_iv) {
    IvDesign design;
    if (name == "iv_root") {
      design = iv_design_root();
    } else if (name == "iv_kbo") {
      design = iv_design_kbo();
    } else {
      design = iv_design_gradient();
    }
    ctx.model = iv_structural_model(design);
    ctx.truth = iv_ground_truth(design);
    ctx.omega_eval = config.omega_eval.value_or(iv_omega_eval(design));
    ctx.sample = [design](int n, std::uint64_t seed) { return iv_sample(design, n, seed); };
  } else {
    FqeDesign design;
    if (name == "fqe_root") {
      design = fqe_design_root();
    } else if (name == "fqe_wald") {
      design = fqe_design_wald();
    } else {
      design = fqe_design_gradient();
    }
    ctx.model = fqe_structural_model(design);
    ctx.truth = fqe_ground_truth(design, config.quadrature_nodes);
    ctx.omega_eval = config.omega_eval.value_or(fqe_omega_eval(design));
    ctx.sample = [design](int n, std::uint64_t seed) { return fqe_sample(design, n, seed); };
  }
  ctx.psi_true = ctx.truth.psi(ctx.omega_eval);

  std::string map_name = config.feature_map;
  if (map_name == "auto") {
    map_name = ctx.is_iv ? (config.design == "iv_root" ? "fourier_linear" : "fourier_sum")
                         : "observable_sa";
  }
  if (map_name == "fourier_sum") {
    ctx.learner.map = FeatureMap::fourier_sum(config.n_frequencies);
  } else if (map_name == "fourier_linear") {
    ctx.learner.map = FeatureMap::fourier_sum(config.n_frequencies, /*include_linear=*/true);
  } else if (map_name == "observable_sa") {
    ctx.learner.map = FeatureMap::observable_sa();
  } else {
    throw DataError("unknown feature_map '" + map_name + "'");
  }
  ctx.learner.lambda = config.ridge_lambda;
  ctx.learner.intercept_unpenalized = true;
  return ctx;
}

namespace {

// Precomputed moments of the evaluation sample; turns per-replication
// L2(P_X) error norms into O(p^2) products of ridge coefficients.
struct DiagContext {
  bool ready = false;
  int n_eval = 0;
  int q = 0, d = 0;
  Mat gram;          // Phi' Phi
  Mat cross;         // Phi' [H* | J* | M*]
  double sq_h = 0.0, sq_j = 0.0, sq_m = 0.0;

  static DiagContext build(const DesignContext& design, const LearnerConfig& learner,
                           const Mat& eval_x, const Vec& omega) {
    DiagContext diag;
    diag.n_eval = static_cast<int>(eval_x.rows());
    diag.q = design.model.dim_out;
    diag.d = design.model.dim_omega;
    const Mat phi = learner.map.matrix(eval_x);
    Mat h_star, j_star, m_star;
    design.truth.oracle_nuisances(omega).evaluate(eval_x, h_star, j_star, m_star);
    diag.gram = phi.transpose() * phi;
    diag.cross.resize(phi.cols(), diag.q + diag.d * diag.q + diag.q);
    diag.cross.leftCols(diag.q) = phi.transpose() * h_star;
    diag.cross.middleCols(diag.q, diag.d * diag.q) = phi.transpose() * j_star;
    diag.cross.rightCols(diag.q) = phi.transpose() * m_star;
    diag.sq_h = h_star.squaredNorm();
    diag.sq_j = j_star.squaredNorm();
    diag.sq_m = m_star.squaredNorm();
    diag.ready = true;
    return diag;
  }

  // |Phi beta - F*|^2 / n for one block of columns.
  double block_err(const Mat& betas, int col0, int cols, double sq) const {
    const Mat beta = betas.middleCols(col0, cols);
    const double quad = (beta.transpose() * gram * beta).trace();
    const double lin = (beta.transpose() * cross.middleCols(col0, cols)).trace();
    return std::max(0.0, (quad - 2.0 * lin + sq) / static_cast<double>(n_eval));
  }

  NuisanceErrors errors(const Mat& betas) const {
    NuisanceErrors err;
    err.h_err = std::sqrt(block_err(betas, 0, q, sq_h));
    // per-coordinate convention, as in nuisance_errors
    err.j_err = std::sqrt(block_err(betas, q, d * q, sq_j) / static_cast<double>(d));
    err.m_err = std::sqrt(block_err(betas, q + d * q, q, sq_m));
    return err;
  }
};

ReplicationRecord run_replication_impl(const ExperimentConfig& config,
                                       const DesignContext& design, const DiagContext* diag,
                                       int n, int rep) {
  ReplicationRecord record;
  record.n = n;
  record.rep = rep;
  record.psi_true = design.psi_true;
  const std::uint64_t seed =
      derive_seed(config.master_seed, static_cast<std::uint64_t>(n),
                  static_cast<std::uint64_t>(rep));
  const Dataset data = design.sample(n, seed);

  for (const std::string& name : config.estimators) {
    EstimateRecord est;
    try {
      GradientReport report;
      if (name == "plugin") {
        report = plugin_estimate(data, design.model, design.omega_eval, design.learner, seed,
                                 config.alpha);
      } else if (name == "obigrad") {
        report =
            dr_estimate(data, design.model, design.omega_eval, design.learner, seed, config.alpha);
      } else if (name == "oracle") {
        report = oracle_dr_estimate(data, design.model, design.omega_eval,
                                    design.truth.oracle_nuisances(design.omega_eval),
                                    config.alpha);
      } else {
        throw DataError("unknown estimator '" + name + "' for gradient experiments");
      }
      est.ok = true;
      est.psi_hat = report.psi_hat;
      est.ci_lower = report.ci_lower;
      est.ci_upper = report.ci_upper;
      est.sigma_diag = report.sigma_hat.diagonal();
    } catch (const std::exception& ex) {
      est.ok = false;
      est.error = ex.what();
    }
    record.estimates.emplace(name, std::move(est));
  }

  if (diag && diag->ready) {
    try {
      const FoldSplit split = split_folds(data, seed);
      const FoldLearner learner1(data.subset(split.fold1), design.model, design.learner);
      const FoldLearner learner2(data.subset(split.fold2), design.model, design.learner);
      const NuisanceErrors e1 = diag->errors(learner1.fit_coefficients(design.omega_eval));
      const NuisanceErrors e2 = diag->errors(learner2.fit_coefficients(design.omega_eval));
      record.h_err = 0.5 * (e1.h_err + e2.h_err);
      record.j_err = 0.5 * (e1.j_err + e2.j_err);
      record.m_err = 0.5 * (e1.m_err + e2.m_err);
      record.product_bias = record.j_err * (record.h_err + record.m_err);
      record.has_nuisance_diag = true;
    } catch (const std::exception&) {
      record.has_nuisance_diag = false;
    }
  }
  return record;
}

}  // namespace

ReplicationRecord run_replication(const ExperimentConfig& config, const DesignContext& design,
                                  const Mat& eval_x, int n, int rep) {
  const DiagContext diag =
      DiagContext::build(design, design.learner, eval_x, design.omega_eval);
  return run_replication_impl(config, design, &diag, n, rep);
}

std::vector<CellSummary> aggregate(const std::vector<ReplicationRecord>& records,
                                   const std::vector<std::string>& estimators) {
  std::vector<CellSummary> cells;
  std::set<int> sizes;
  for (const auto& r : records) sizes.insert(r.n);

  for (int n : sizes) {
    // nuisance diagnostics are shared across estimators within a cell
    std::vector<double> h_errs, j_errs, m_errs, products;
    for (const auto& r : records) {
      if (r.n != n || !r.has_nuisance_diag) continue;
      h_errs.push_back(r.h_err);
      j_errs.push_back(r.j_err);
      m_errs.push_back(r.m_err);
      products.push_back(r.product_bias);
    }
    for (const std::string& name : estimators) {
      CellSummary cell;
      cell.estimator = name;
      cell.n = n;
      std::vector<double> sq_errors, lengths, studentized;
      Vec mean_psi;
      int covered = 0, ci_count = 0;
      for (const auto& r : records) {
        if (r.n != n) continue;
        const auto it = r.estimates.find(name);
        if (it == r.estimates.end()) continue;
        ++cell.replications;
        const EstimateRecord& est = it->second;
        if (!est.ok) {
          ++cell.excluded;
          continue;
        }
        const Vec err = est.psi_hat - r.psi_true;
        sq_errors.push_back(err.squaredNorm());
        if (mean_psi.size() == 0) mean_psi = Vec::Zero(est.psi_hat.size());
        mean_psi += est.psi_hat;
        const int d = static_cast<int>(est.psi_hat.size());
        const double n_total = static_cast<double>(r.n);
        for (int k = 0; k < d; ++k) {
          ++ci_count;
          if (r.psi_true[k] >= est.ci_lower[k] && r.psi_true[k] <= est.ci_upper[k]) ++covered;
          lengths.push_back(est.ci_upper[k] - est.ci_lower[k]);
          const double se = std::sqrt(std::max(0.0, est.sigma_diag[k]) / n_total);
          if (se > 0.0) studentized.push_back(err[k] / se);
        }
      }
      const int used = static_cast<int>(sq_errors.size());
      if (used > 0) {
        const double mean_sq = mean_of(sq_errors);
        cell.rmse = std::sqrt(mean_sq);
        cell.has_mc_err = used > 1;
        if (used > 1 && cell.rmse > 0.0) {
          cell.rmse_err = 1.959963984540054 * sd_of(sq_errors) /
                          (2.0 * cell.rmse * std::sqrt(static_cast<double>(used)));
        }
        mean_psi /= static_cast<double>(used);
        Vec psi_true;
        for (const auto& r : records) {
          if (r.n == n) {
            psi_true = r.psi_true;
            break;
          }
        }
        cell.bias_norm = (mean_psi - psi_true).norm();
        cell.coverage = ci_count ? static_cast<double>(covered) / ci_count : 0.0;
        wilson_interval(covered, ci_count, cell.coverage_lo, cell.coverage_hi);
        cell.avg_length = mean_of(lengths);
        if (lengths.size() > 1) {
          cell.avg_length_err = 1.959963984540054 * sd_of(lengths) /
                                std::sqrt(static_cast<double>(lengths.size()));
        }
        if (!studentized.empty()) {
          cell.stud_mean = mean_of(studentized);
          cell.stud_sd = sd_of(studentized);
          std::sort(studentized.begin(), studentized.end());
          cell.stud_q025 = quantile(studentized, 0.025);
          cell.stud_median = quantile(studentized, 0.5);
          cell.stud_q975 = quantile(studentized, 0.975);
        }
      }
      cell.h_err = mean_of(h_errs);
      cell.j_err = mean_of(j_errs);
      cell.m_err = mean_of(m_errs);
      cell.product_bias = mean_of(products);
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

const CellSummary& find_cell(const ExperimentResult& result, const std::string& estimator,
                             int n) {
  for (const auto& cell : result.cells) {
    if (cell.estimator == estimator && cell.n == n) return cell;
  }
  throw DataError("no cell for estimator '" + estimator + "' at N = " + std::to_string(n));
}

ExperimentResult run_gradient_experiment(const ExperimentConfig& config) {
  ExperimentResult result;
  result.config = config;
  const DesignContext design = resolve_design(config);
  const Mat eval_x = design.truth.sample_x(
      config.eval_samples, derive_seed(config.master_seed, kEvalSampleTag));
  const DiagContext diag =
      DiagContext::build(design, design.learner, eval_x, design.omega_eval);

  const int reps = config.replications;
  result.records.resize(static_cast<std::size_t>(config.sample_sizes.size()) * reps);
  for (std::size_t ni = 0; ni < config.sample_sizes.size(); ++ni) {
    const int n = config.sample_sizes[ni];
    ReplicationRecord* out = result.records.data() + ni * reps;
    parallel_for(reps, config.workers, [&, n, out](int rep) {
      out[rep] = run_replication_impl(config, design, &diag, n, rep);
    });
  }
  result.cells = aggregate(result.records, config.estimators);
  return result;
}

namespace {

KernelConfig make_kernel_config(const ExperimentConfig& config, const DesignContext& design,
                                double lambda, std::uint64_t rff_seed) {
  KernelConfig kcfg;
  kcfg.lambda = lambda;
  kcfg.bandwidth = config.kbo_bandwidth;
  kcfg.rff_features = config.kbo_rff_features;
  kcfg.seed = rff_seed;
  std::string mode = config.kbo_mode;
  if (mode == "auto") mode = design.is_iv ? "exact" : "rff";
  kcfg.mode = (mode == "rff") ? KernelConfig::Mode::rff : KernelConfig::Mode::exact_gaussian;
  return kcfg;
}

}  // namespace

KboResult run_kbo_experiment(const ExperimentConfig& config) {
  if (config.kbo_lambda_grid.empty()) throw DataError("kbo experiment needs kbo_lambda_grid");
  if (config.sample_sizes.size() != 1) {
    throw DataError("kbo experiment expects a single sample size");
  }
  KboResult result;
  result.config = config;
  const DesignContext design = resolve_design(config);
  const int n = config.sample_sizes[0];
  const int n_lambda = static_cast<int>(config.kbo_lambda_grid.size());
  const int reps = config.replications;

  // Regularized population targets, one per lambda on a shared design sample.
  std::vector<Vec> psi_lambda(n_lambda);
  const std::uint64_t target_seed = derive_seed(config.master_seed, kKboTargetTag);
  parallel_for(n_lambda, config.workers, [&](int li) {
    KernelConfig kcfg = make_kernel_config(config, design, config.kbo_lambda_grid[li],
                                           derive_seed(target_seed, 0x52464600));
    kcfg.gram_cap = std::max(kcfg.gram_cap, config.kbo_target_samples);
    psi_lambda[li] = regularized_target(design.model, design.omega_eval, kcfg, design.truth,
                                        config.kbo_target_samples, target_seed);
  });

  struct RepOutcome {
    std::vector<double> kbo_total_sq, kbo_est_sq;  // per lambda
    double obigrad_sq = -1.0, plugin_sq = -1.0, oracle_sq = -1.0;
  };
  std::vector<RepOutcome> outcomes(reps);
  parallel_for(reps, config.workers, [&](int rep) {
    RepOutcome& out = outcomes[rep];
    out.kbo_total_sq.assign(n_lambda, -1.0);
    out.kbo_est_sq.assign(n_lambda, -1.0);
    const std::uint64_t seed = derive_seed(config.master_seed, static_cast<std::uint64_t>(n),
                                           static_cast<std::uint64_t>(rep));
    const Dataset data = design.sample(n, seed);
    for (int li = 0; li < n_lambda; ++li) {
      try {
        const KernelConfig kcfg = make_kernel_config(
            config, design, config.kbo_lambda_grid[li], derive_seed(seed, kRffTag));
        const Vec kbo = kbo_gradient(data, design.model, design.omega_eval, kcfg, seed);
        out.kbo_total_sq[li] = (kbo - design.psi_true).squaredNorm();
        out.kbo_est_sq[li] = (kbo - psi_lambda[li]).squaredNorm();
      } catch (const std::exception&) {
        // recorded as missing; excluded from the aggregate
      }
    }
    try {
      out.obigrad_sq = (dr_estimate(data, design.model, design.omega_eval, design.learner, seed)
                            .psi_hat -
                        design.psi_true)
                           .squaredNorm();
      out.plugin_sq =
          (plugin_estimate(data, design.model, design.omega_eval, design.learner, seed).psi_hat -
           design.psi_true)
              .squaredNorm();
      out.oracle_sq = (oracle_dr_estimate(data, design.model, design.omega_eval,
                                          design.truth.oracle_nuisances(design.omega_eval))
                           .psi_hat -
                       design.psi_true)
                          .squaredNorm();
    } catch (const std::exception&) {
    }
  });

  auto rmse_of = [](const std::vector<double>& sq, double& rmse, double& err) {
    std::vector<double> good;
    for (double v : sq) {
      if (v >= 0.0) good.push_back(v);
    }
    if (good.empty()) {
      rmse = err = 0.0;
      return;
    }
    rmse = std::sqrt(mean_of(good));
    err = (good.size() > 1 && rmse > 0.0)
              ? 1.959963984540054 * sd_of(good) / (2.0 * rmse * std::sqrt((double)good.size()))
              : 0.0;
  };

  std::vector<double> ob_sq, pi_sq, or_sq;
  for (const auto& o : outcomes) {
    ob_sq.push_back(o.obigrad_sq);
    pi_sq.push_back(o.plugin_sq);
    or_sq.push_back(o.oracle_sq);
  }
  double ob, ob_err, pi, pi_err, orr, or_err;
  rmse_of(ob_sq, ob, ob_err);
  rmse_of(pi_sq, pi, pi_err);
  rmse_of(or_sq, orr, or_err);

  for (int li = 0; li < n_lambda; ++li) {
    KboRow row;
    row.lambda = config.kbo_lambda_grid[li];
    std::vector<double> tot, est;
    for (const auto& o : outcomes) {
      tot.push_back(o.kbo_total_sq[li]);
      est.push_back(o.kbo_est_sq[li]);
    }
    rmse_of(tot, row.kbo_total, row.kbo_total_err);
    rmse_of(est, row.kbo_estimation, row.kbo_estimation_err);
    row.reg_bias = (psi_lambda[li] - design.psi_true).norm();
    row.obigrad = ob;
    row.obigrad_err = ob_err;
    row.plugin = pi;
    row.plugin_err = pi_err;
    row.oracle = orr;
    result.rows.push_back(row);
  }
  return result;
}

RootResultTable run_root_experiment(const ExperimentConfig& config) {
  RootResultTable result;
  result.config = config;
  const DesignContext design = resolve_design(config);
  const int d = design.model.dim_omega;
  const int reps = config.replications;

  struct RepRoot {
    std::map<std::string, Vec> roots;  // estimator -> omega_hat (empty on failure)
  };

  for (int n : config.sample_sizes) {
    std::vector<RepRoot> outcomes(reps);
    parallel_for(reps, config.workers, [&, n](int rep) {
      const std::uint64_t seed = derive_seed(config.master_seed, static_cast<std::uint64_t>(n),
                                             static_cast<std::uint64_t>(rep));
      const Dataset data = design.sample(n, seed);
      for (const std::string& name : config.estimators) {
        EstimatorChoice choice;
        choice.learner = design.learner;
        if (name == "plugin") {
          choice.kind = EstimatorKind::plugin;
        } else if (name == "obigrad") {
          choice.kind = EstimatorKind::obigrad;
        } else if (name == "oracle") {
          choice.kind = EstimatorKind::oracle_dr;
          choice.oracle_family = design.truth.oracle_nuisances;
        } else if (name == "kbo_fixed" || name == "kbo_decay") {
          choice.kind = EstimatorKind::kbo;
          const double lambda =
              name == "kbo_fixed"
                  ? config.kbo_fixed_lambda
                  : config.kbo_decay_coef * std::pow(n, -config.kbo_decay_exponent);
          choice.kernel = make_kernel_config(config, design, lambda, derive_seed(seed, kRffTag));
        } else {
          continue;
        }
        try {
          outcomes[rep].roots[name] = affine_root_solve(data, design.model, choice, seed)
                                          .omega_root;
        } catch (const std::exception&) {
          outcomes[rep].roots[name] = Vec();
        }
      }
    });

    for (const std::string& name : config.estimators) {
      RootCell cell;
      cell.estimator = name;
      cell.n = n;
      cell.replications = reps;
      std::vector<double> sq;
      Vec mean_root = Vec::Zero(d);
      for (const auto& o : outcomes) {
        const auto it = o.roots.find(name);
        if (it == o.roots.end() || it->second.size() == 0) {
          ++cell.excluded;
          continue;
        }
        sq.push_back((it->second - design.truth.omega_star).squaredNorm());
        mean_root += it->second;
      }
      if (!sq.empty()) {
        cell.rmse = std::sqrt(mean_of(sq));
        if (sq.size() > 1 && cell.rmse > 0.0) {
          cell.rmse_err = 1.959963984540054 * sd_of(sq) /
                          (2.0 * cell.rmse * std::sqrt(static_cast<double>(sq.size())));
        }
        mean_root /= static_cast<double>(sq.size());
        cell.bias_norm = (mean_root - design.truth.omega_star).norm();
      }
      result.cells.push_back(std::move(cell));
    }
  }

  // Population roots of the regularized targets, for the configured kbo
  // lambdas (fixed value plus the decaying schedule over the sample sizes).
  const bool wants_kbo =
      std::find(config.estimators.begin(), config.estimators.end(), std::string("kbo_fixed")) !=
          config.estimators.end() ||
      std::find(config.estimators.begin(), config.estimators.end(), std::string("kbo_decay")) !=
          config.estimators.end();
  if (wants_kbo) {
    std::set<double> lambdas;
    if (std::find(config.estimators.begin(), config.estimators.end(),
                  std::string("kbo_fixed")) != config.estimators.end()) {
      lambdas.insert(config.kbo_fixed_lambda);
    }
    if (std::find(config.estimators.begin(), config.estimators.end(),
                  std::string("kbo_decay")) != config.estimators.end()) {
      for (int n : config.sample_sizes) {
        lambdas.insert(config.kbo_decay_coef * std::pow(n, -config.kbo_decay_exponent));
      }
    }
    const std::uint64_t target_seed = derive_seed(config.master_seed, kKboTargetTag);
    std::vector<double> lambda_list(lambdas.begin(), lambdas.end());
    std::vector<KboPopulationRoot> roots(lambda_list.size());
    parallel_for(static_cast<int>(lambda_list.size()), config.workers, [&](int li) {
      KernelConfig kcfg =
          make_kernel_config(config, design, lambda_list[li], derive_seed(target_seed, 1));
      kcfg.gram_cap = std::max(kcfg.gram_cap, config.kbo_target_samples);
      // The regularized target is affine in omega for these designs; probe it.
      const Vec b = regularized_target(design.model, Vec::Zero(d), kcfg, design.truth,
                                       config.kbo_target_samples, target_seed);
      Mat a(d, d);
      for (int k = 0; k < d; ++k) {
        a.col(k) = regularized_target(design.model, Vec::Unit(d, k), kcfg, design.truth,
                                      config.kbo_target_samples, target_seed) -
                   b;
      }
      KboPopulationRoot row;
      row.lambda = lambda_list[li];
      const Vec root = a.fullPivLu().solve(-b);
      row.population_root = d == 1 ? root[0] : root.norm();
      row.bias = (root - design.truth.omega_star).norm();
      roots[li] = row;
    });
    result.population_roots = roots;
  }
  return result;
}

const RootCell& find_root_cell(const RootResultTable& result, const std::string& estimator,
                               int n) {
  for (const auto& cell : result.cells) {
    if (cell.estimator == estimator && cell.n == n) return cell;
  }
  throw DataError("no root cell for estimator '" + estimator + "' at n = " + std::to_string(n));
}

SweepResult run_sweep(const ExperimentConfig& config) {
  SweepResult result;
  result.config = config;
  const DesignContext design = resolve_design(config);
  const int d = design.model.dim_omega;

  std::vector<Vec> grid;
  grid.push_back(design.omega_eval);
  for (int k = 0; k < d; ++k) {
    grid.push_back(design.omega_eval + config.sweep_radius * Vec::Unit(d, k));
    grid.push_back(design.omega_eval - config.sweep_radius * Vec::Unit(d, k));
  }
  result.grid_size = static_cast<int>(grid.size());
  std::vector<Vec> psi_grid;
  psi_grid.reserve(grid.size());
  for (const Vec& omega : grid) psi_grid.push_back(design.truth.psi(omega));

  const int reps = config.replications;
  for (int n : config.sample_sizes) {
    std::vector<double> sup_errors(reps), fixed_errors(reps);
    parallel_for(reps, config.workers, [&, n](int rep) {
      const std::uint64_t seed = derive_seed(config.master_seed, static_cast<std::uint64_t>(n),
                                             static_cast<std::uint64_t>(rep));
      const Dataset data = design.sample(n, seed);
      EstimatorChoice choice;
      choice.kind = EstimatorKind::obigrad;
      choice.learner = design.learner;
      const GradientEvaluator eval(data, design.model, choice, seed);
      double sup = 0.0, fixed = 0.0;
      for (std::size_t gi = 0; gi < grid.size(); ++gi) {
        const double err = (eval.one_fold(grid[gi]) - psi_grid[gi]).norm();
        sup = std::max(sup, err);
        if (gi == 0) fixed = err;
      }
      sup_errors[rep] = sup;
      fixed_errors[rep] = fixed;
    });
    SweepRow row;
    row.n = n;
    row.mean_sup_error = mean_of(sup_errors);
    row.mc_err = reps > 1
                     ? 1.959963984540054 * sd_of(sup_errors) / std::sqrt(static_cast<double>(reps))
                     : 0.0;
    row.mean_fixed_error = mean_of(fixed_errors);
    result.rows.push_back(row);
  }

  if (result.rows.size() >= 2) {
    // least-squares slope of log(mean sup error) against log N
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double m = static_cast<double>(result.rows.size());
    for (const auto& row : result.rows) {
      const double x = std::log(static_cast<double>(row.n));
      const double y = std::log(row.mean_sup_error);
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    result.loglog_slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  }
  return result;
}

namespace {

nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["design"] = c.design;
  j["sample_sizes"] = c.sample_sizes;
  j["replications"] = c.replications;
  j["estimators"] = c.estimators;
  j["alpha"] = c.alpha;
  j["feature_map"] = c.feature_map;
  j["n_frequencies"] = c.n_frequencies;
  j["ridge_lambda"] = c.ridge_lambda;
  j["eval_samples"] = c.eval_samples;
  j["master_seed"] = c.master_seed;
  if (!c.kbo_lambda_grid.empty()) {
    j["kbo_lambda_grid"] = c.kbo_lambda_grid;
    j["kbo_bandwidth"] = c.kbo_bandwidth;
    j["kbo_mode"] = c.kbo_mode;
    j["kbo_target_samples"] = c.kbo_target_samples;
  }
  return j;
}

void write_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write JSON: " + path);
  out << j.dump(2) << "\n";
}

}  // namespace

void emit_reports(const ExperimentResult& result, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const std::string base = out_dir + "/";

  {
    CsvWriter csv(base + "gradient_rmse.csv",
                  "N,estimator,rmse,rmse_err,coverage,coverage_err,product_bias");
    for (const auto& cell : result.cells) {
      csv.field(cell.n)
          .field(cell.estimator)
          .field(cell.rmse)
          .field(cell.rmse_err)
          .field(cell.coverage)
          .field(0.5 * (cell.coverage_hi - cell.coverage_lo))
          .field(cell.product_bias);
      csv.endrow();
    }
  }
  {
    CsvWriter csv(base + "nuisance_diagnostics.csv", "N,h_err,j_err,m_err,product_bias");
    std::set<int> done;
    for (const auto& cell : result.cells) {
      if (!done.insert(cell.n).second) continue;
      csv.field(cell.n).field(cell.h_err).field(cell.j_err).field(cell.m_err).field(
          cell.product_bias);
      csv.endrow();
    }
  }
  {
    CsvWriter csv(base + "wald.csv",
                  "N,estimator,coverage,coverage_lo,coverage_hi,length,length_err,rmse,rmse_err");
    for (const auto& cell : result.cells) {
      csv.field(cell.n)
          .field(cell.estimator)
          .field(cell.coverage)
          .field(cell.coverage_lo)
          .field(cell.coverage_hi)
          .field(cell.avg_length)
          .field(cell.avg_length_err)
          .field(cell.rmse)
          .field(cell.rmse_err);
      csv.endrow();
    }
  }
  {
    CsvWriter csv(base + "studentized.csv", "N,estimator,mean,sd,q025,median,q975");
    for (const auto& cell : result.cells) {
      csv.field(cell.n)
          .field(cell.estimator)
          .field(cell.stud_mean)
          .field(cell.stud_sd)
          .field(cell.stud_q025)
          .field(cell.stud_median)
          .field(cell.stud_q975);
      csv.endrow();
    }
  }

  // QQ data: sorted studentized obigrad errors against normal quantiles.
  std::set<int> sizes;
  for (const auto& r : result.records) sizes.insert(r.n);
  for (int n : sizes) {
    std::vector<double> zs;
    for (const auto& r : result.records) {
      if (r.n != n) continue;
      const auto it = r.estimates.find("obigrad");
      if (it == r.estimates.end() || !it->second.ok) continue;
      const EstimateRecord& est = it->second;
      for (Eigen::Index k = 0; k < est.psi_hat.size(); ++k) {
        const double se = std::sqrt(std::max(0.0, est.sigma_diag[k]) / static_cast<double>(n));
        zs.push_back(se > 0.0 ? (est.psi_hat[k] - r.psi_true[k]) / se : 0.0);
      }
    }
    if (zs.empty()) continue;
    std::sort(zs.begin(), zs.end());
    CsvWriter csv(base + "qq_n" + std::to_string(n) + ".csv", "theoretical,observed");
    for (std::size_t i = 0; i < zs.size(); ++i) {
      const double p = (static_cast<double>(i) + 0.5) / static_cast<double>(zs.size());
      csv.field(normal_quantile(p)).field(zs[i]);
      csv.endrow();
    }
  }

  nlohmann::json summary;
  summary["config"] = config_to_json(result.config);
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& cell : result.cells) {
    nlohmann::json c;
    c["estimator"] = cell.estimator;
    c["n"] = cell.n;
    c["replications"] = cell.replications;
    c["excluded"] = cell.excluded;
    c["rmse"] = cell.rmse;
    c["rmse_err"] = cell.rmse_err;
    c["coverage"] = cell.coverage;
    c["avg_length"] = cell.avg_length;
    c["stud_mean"] = cell.stud_mean;
    c["stud_sd"] = cell.stud_sd;
    c["product_bias"] = cell.product_bias;
    cells.push_back(c);
  }
  summary["cells"] = cells;
  write_json(summary, base + "summary.json");
}

void emit_reports(const KboResult& result, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  CsvWriter csv(out_dir + "/kbo_decomposition.csv",
                "lambda,kbo_total,reg_bias,kbo_estimation,obigrad,plugin");
  for (const auto& row : result.rows) {
    csv.field(row.lambda)
        .field(row.kbo_total)
        .field(row.reg_bias)
        .field(row.kbo_estimation)
        .field(row.obigrad)
        .field(row.plugin);
    csv.endrow();
  }
  nlohmann::json summary;
  summary["config"] = config_to_json(result.config);
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : result.rows) {
    nlohmann::json r;
    r["lambda"] = row.lambda;
    r["kbo_total"] = row.kbo_total;
    r["kbo_total_err"] = row.kbo_total_err;
    r["reg_bias"] = row.reg_bias;
    r["kbo_estimation"] = row.kbo_estimation;
    r["obigrad"] = row.obigrad;
    r["plugin"] = row.plugin;
    r["oracle"] = row.oracle;
    rows.push_back(r);
  }
  summary["rows"] = rows;
  write_json(summary, out_dir + "/summary.json");
}

void emit_reports(const RootResultTable& result, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  {
    CsvWriter csv(out_dir + "/root_rmse.csv", "n,estimator,rmse,rmse_err,bias_norm,excluded");
    for (const auto& cell : result.cells) {
      csv.field(cell.n)
          .field(cell.estimator)
          .field(cell.rmse)
          .field(cell.rmse_err)
          .field(cell.bias_norm)
          .field(cell.excluded);
      csv.endrow();
    }
  }
  if (!result.population_roots.empty()) {
    CsvWriter csv(out_dir + "/kbo_population_roots.csv", "lambda,population_root,bias");
    for (const auto& row : result.population_roots) {
      csv.field(row.lambda).field(row.population_root).field(row.bias);
      csv.endrow();
    }
  }
  nlohmann::json summary;
  summary["config"] = config_to_json(result.config);
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& cell : result.cells) {
    nlohmann::json c;
    c["estimator"] = cell.estimator;
    c["n"] = cell.n;
    c["rmse"] = cell.rmse;
    c["rmse_err"] = cell.rmse_err;
    c["bias_norm"] = cell.bias_norm;
    c["excluded"] = cell.excluded;
    cells.push_back(c);
  }
  summary["cells"] = cells;
  write_json(summary, out_dir + "/summary.json");
}

void emit_reports(const SweepResult& result, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  CsvWriter csv(out_dir + "/sweep.csv", "N,mean_sup_error,mc_err,mean_fixed_error");
  for (const auto& row : result.rows) {
    csv.field(row.n).field(row.mean_sup_error).field(row.mc_err).field(row.mean_fixed_error);
    csv.endrow();
  }
  nlohmann::json summary;
  summary["config"] = config_to_json(result.config);
  summary["grid_size"] = result.grid_size;
  summary["loglog_slope"] = result.loglog_slope;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : result.rows) {
    nlohmann::json r;
    r["n"] = row.n;
    r["mean_sup_error"] = row.mean_sup_error;
    r["mc_err"] = row.mc_err;
    r["mean_fixed_error"] = row.mean_fixed_error;
    rows.push_back(r);
  }
  summary["rows"] = rows;
  write_json(summary, out_dir + "/summary.json");
}

}  // namespace obigrad
