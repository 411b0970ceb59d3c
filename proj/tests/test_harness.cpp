#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "obigrad/harness.hpp"

using namespace obigrad;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig tiny_iv_config() {
  ExperimentConfig config = default_config("iv_gradient");
  config.sample_sizes = {40, 80};
  config.replications = 4;
  config.eval_samples = 2000;
  config.master_seed = 777;
  return config;
}

}  // namespace

TEST_CASE("replication records are deterministic and carry the truth") {
  ExperimentConfig config = tiny_iv_config();
  DesignContext design = resolve_design(config);
  Mat eval_x = design.truth.sample_x(2000, 1);
  ReplicationRecord a = run_replication(config, design, eval_x, 40, 2);
  ReplicationRecord b = run_replication(config, design, eval_x, 40, 2);
  CHECK(a.estimates.at("obigrad").ok);
  CHECK((a.estimates.at("obigrad").psi_hat - b.estimates.at("obigrad").psi_hat).norm() == 0.0);
  CHECK((a.psi_true - design.truth.psi(design.omega_eval)).norm() == 0.0);
  CHECK(a.has_nuisance_diag);
  CHECK(a.product_bias == doctest::Approx(a.j_err * (a.h_err + a.m_err)));

  ReplicationRecord c = run_replication(config, design, eval_x, 40, 3);
  CHECK((a.estimates.at("obigrad").psi_hat - c.estimates.at("obigrad").psi_hat).norm() > 0.0);
}

TEST_CASE("aggregate handles exact estimates and degenerate cells") {
  std::vector<ReplicationRecord> records;
  const Vec truth = (Vec(2) << 0.5, -0.25).finished();
  for (int rep = 0; rep < 3; ++rep) {
    ReplicationRecord r;
    r.n = 100;
    r.rep = rep;
    r.psi_true = truth;
    EstimateRecord est;
    est.ok = true;
    est.psi_hat = truth;
    est.ci_lower = truth - Vec::Constant(2, 0.1);
    est.ci_upper = truth + Vec::Constant(2, 0.1);
    est.sigma_diag = Vec::Constant(2, 0.04);
    r.estimates["obigrad"] = est;
    records.push_back(r);
  }
  auto cells = aggregate(records, {"obigrad"});
  REQUIRE(cells.size() == 1);
  CHECK(cells[0].rmse == 0.0);
  CHECK(cells[0].coverage == 1.0);
  CHECK(cells[0].avg_length == doctest::Approx(0.2));
  CHECK(cells[0].has_mc_err);

  // single replication: no Monte Carlo error bars
  auto single = aggregate({records[0]}, {"obigrad"});
  CHECK_FALSE(single[0].has_mc_err);

  // permutation invariance
  std::vector<ReplicationRecord> shuffled = records;
  std::reverse(shuffled.begin(), shuffled.end());
  auto cells2 = aggregate(shuffled, {"obigrad"});
  CHECK(cells2[0].rmse == cells[0].rmse);
  CHECK(cells2[0].coverage == cells[0].coverage);
}

TEST_CASE("failed estimates are excluded and counted") {
  std::vector<ReplicationRecord> records;
  const Vec truth = Vec::Constant(1, 1.0);
  for (int rep = 0; rep < 4; ++rep) {
    ReplicationRecord r;
    r.n = 50;
    r.rep = rep;
    r.psi_true = truth;
    EstimateRecord est;
    if (rep == 2) {
      est.ok = false;
      est.error = "synthetic failure";
    } else {
      est.ok = true;
      est.psi_hat = truth + Vec::Constant(1, 0.1);
      est.ci_lower = est.psi_hat - Vec::Constant(1, 0.3);
      est.ci_upper = est.psi_hat + Vec::Constant(1, 0.3);
      est.sigma_diag = Vec::Constant(1, 0.01);
    }
    r.estimates["obigrad"] = est;
    records.push_back(r);
  }
  auto cells = aggregate(records, {"obigrad"});
  CHECK(cells[0].replications == 4);
  CHECK(cells[0].excluded == 1);
  CHECK(cells[0].rmse == doctest::Approx(0.1));
}

TEST_CASE("config files override defaults and reject unknown keys") {
  const fs::path path = "test_config.cfg";
  {
    std::ofstream out(path);
    out << "# comment line\n";
    out << "design = iv_gradient\n";
    out << "sample_sizes = 100, 200\n";
    out << "replications = 7\n";
    out << "estimators = obigrad, oracle\n";
    out << "ridge_lambda = 1e-4\n";
    out << "master_seed = 99\n";
    out << "omega_eval = 0.1, 0.2, 0.3, 0.4\n";
  }
  ExperimentConfig config = load_config_file(path.string(), default_config("iv_gradient"));
  CHECK(config.sample_sizes == std::vector<int>{100, 200});
  CHECK(config.replications == 7);
  CHECK(config.estimators == std::vector<std::string>{"obigrad", "oracle"});
  CHECK(config.ridge_lambda == 1e-4);
  CHECK(config.master_seed == 99);
  REQUIRE(config.omega_eval.has_value());
  CHECK(config.omega_eval->size() == 4);
  fs::remove(path);

  const fs::path bad = "test_config_bad.cfg";
  {
    std::ofstream out(bad);
    out << "no_such_key = 5\n";
  }
  CHECK_THROWS_AS(load_config_file(bad.string(), default_config("iv_gradient")), DataError);
  fs::remove(bad);

  CHECK_THROWS_AS(default_config("iv_nonsense"), DataError);
}

TEST_CASE("gradient experiment emits the full report set deterministically") {
  ExperimentConfig config = tiny_iv_config();
  config.workers = 2;
  ExperimentResult result = run_gradient_experiment(config);
  CHECK(result.records.size() == 8);
  CHECK(result.cells.size() == 6);  // 3 estimators x 2 sizes

  const fs::path dir1 = "test_reports_a", dir2 = "test_reports_b";
  emit_reports(result, dir1.string());

  // identical run, sequential workers: byte-identical files
  ExperimentConfig config2 = tiny_iv_config();
  config2.workers = 1;
  emit_reports(run_gradient_experiment(config2), dir2.string());

  for (const char* name :
       {"gradient_rmse.csv", "nuisance_diagnostics.csv", "wald.csv", "studentized.csv",
        "qq_n40.csv", "qq_n80.csv", "summary.json"}) {
    CAPTURE(name);
    CHECK(slurp(dir1 / name) == slurp(dir2 / name));
  }

  // schema checks
  {
    std::ifstream in(dir1 / "gradient_rmse.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "N,estimator,rmse,rmse_err,coverage,coverage_err,product_bias");
  }
  {
    // QQ rows = replications x d
    std::ifstream in(dir1 / "qq_n40.csv");
    std::string line;
    int rows = -1;  // header
    while (std::getline(in, line)) {
      if (!line.empty()) ++rows;
    }
    CHECK(rows == config.replications * 4);
  }
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST_CASE("sweep reduces to the fixed-point error on a degenerate grid") {
  ExperimentConfig config = default_config("iv_gradient");
  config.sample_sizes = {100};
  config.replications = 3;
  config.master_seed = 5;
  config.sweep_radius = 0.0;
  SweepResult degenerate = run_sweep(config);
  REQUIRE(degenerate.rows.size() == 1);
  CHECK(degenerate.rows[0].mean_sup_error ==
        doctest::Approx(degenerate.rows[0].mean_fixed_error).epsilon(1e-12));

  config.sweep_radius = 0.25;
  SweepResult sweep = run_sweep(config);
  CHECK(sweep.grid_size == 9);
  CHECK(sweep.rows[0].mean_sup_error >= sweep.rows[0].mean_fixed_error);
}

TEST_CASE("root experiment table contains every configured cell") {
  ExperimentConfig config = default_config("iv_root");
  config.sample_sizes = {60, 120};
  config.replications = 3;
  config.estimators = {"plugin", "obigrad", "oracle"};
  config.master_seed = 31;
  RootResultTable table = run_root_experiment(config);
  CHECK(table.cells.size() == 6);
  const RootCell& cell = find_root_cell(table, "obigrad", 120);
  CHECK(cell.replications == 3);
  CHECK(cell.excluded == 0);
  CHECK(cell.rmse < 0.5);
  CHECK(table.population_roots.empty());

  const fs::path dir = "test_root_reports";
  emit_reports(table, dir.string());
  CHECK(fs::exists(dir / "root_rmse.csv"));
  CHECK(fs::exists(dir / "summary.json"));
  fs::remove_all(dir);
}

TEST_CASE("parallel_for covers every index exactly once") {
  std::vector<int> hits(500, 0);
  parallel_for(500, 3, [&](int i) { hits[i] += 1; });
  CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));

  // exceptions propagate
  CHECK_THROWS_AS(
      parallel_for(10, 2, [](int i) { if (i == 7) throw DataError("boom"); }), DataError);
}

TEST_CASE("kbo experiment produces a coherent decomposition table") {
  ExperimentConfig config = default_config("iv_kbo");
  config.replications = 3;
  config.kbo_lambda_grid = {1e-3, 1e-2};
  config.kbo_target_samples = 800;
  config.sample_sizes = {200};
  config.master_seed = 8;
  KboResult result = run_kbo_experiment(config);
  REQUIRE(result.rows.size() == 2);
  CHECK(result.rows[0].lambda == 1e-3);
  CHECK(result.rows[0].reg_bias < result.rows[1].reg_bias);
  for (const auto& row : result.rows) {
    CHECK(row.kbo_total <= row.kbo_estimation + row.reg_bias + 1e-9);
    CHECK(row.obigrad > 0.0);
  }

  const fs::path dir = "test_kbo_reports";
  emit_reports(result, dir.string());
  std::ifstream in(dir / "kbo_decomposition.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "lambda,kbo_total,reg_bias,kbo_estimation,obigrad,plugin");
  fs::remove_all(dir);
}
