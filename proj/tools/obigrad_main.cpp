// obigrad command line: gradient estimation on CSV data, Monte Carlo
// experiments, the omega-grid sweep diagnostic, and root estimation.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "obigrad/dataset.hpp"
#include "obigrad/dgp.hpp"
#include "obigrad/estimator.hpp"
#include "obigrad/harness.hpp"
#include "obigrad/optimize.hpp"

namespace {

using namespace obigrad;

Vec parse_vector(const std::string& text) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) values.push_back(std::stod(item));
  }
  Vec v(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) v[i] = values[i];
  return v;
}

// Named structural models for CSV data. gamma only applies to the Bellman
// maps.
StructuralModel named_model(const std::string& name, int dim_omega, double gamma) {
  if (name == "iv_sine") {
    IvDesign design = iv_design_gradient();
    design.d = dim_omega;
    return iv_structural_model(design);
  }
  if (name == "iv_linear") {
    return iv_structural_model(iv_design_root());
  }
  if (name == "fqe_bellman") {
    FqeDesign design = dim_omega == 2 ? fqe_design_root() : fqe_design_gradient();
    design.gamma = gamma;
    if (dim_omega != 2 && dim_omega != 4) {
      throw DataError("fqe_bellman supports omega of dimension 2 or 4");
    }
    return fqe_structural_model(design);
  }
  throw DataError("unknown model '" + name + "' (expected iv_sine, iv_linear, fqe_bellman)");
}

LearnerConfig learner_for_model(const std::string& model, const std::string& features,
                                int n_frequencies, double lambda) {
  LearnerConfig learner;
  std::string map = features;
  if (map == "auto") {
    map = (model == "fqe_bellman") ? "observable_sa"
                                   : (model == "iv_linear" ? "fourier_linear" : "fourier_sum");
  }
  if (map == "fourier_sum") {
    learner.map = FeatureMap::fourier_sum(n_frequencies);
  } else if (map == "fourier_linear") {
    learner.map = FeatureMap::fourier_sum(n_frequencies, true);
  } else if (map == "observable_sa") {
    learner.map = FeatureMap::observable_sa();
  } else {
    throw DataError("unknown feature map '" + map + "'");
  }
  learner.lambda = lambda;
  return learner;
}

int run_estimate(const std::string& data_path, const std::string& model_name,
                 const std::string& omega_text, const std::string& method, double alpha,
                 std::uint64_t seed, const std::string& features, int n_frequencies,
                 double lambda, double gamma, const std::string& out_path) {
  const Dataset data = read_dataset_csv(data_path);
  const Vec omega = parse_vector(omega_text);
  if (omega.size() == 0) throw DataError("--omega must be a comma-separated vector");
  const StructuralModel model = named_model(model_name, static_cast<int>(omega.size()), gamma);
  if (model.dim_omega != omega.size()) {
    throw ShapeError("omega dimension does not match the model");
  }
  const LearnerConfig learner = learner_for_model(model_name, features, n_frequencies, lambda);
  GradientReport report;
  if (method == "obigrad") {
    report = dr_estimate(data, model, omega, learner, seed, alpha);
  } else if (method == "plugin") {
    report = plugin_estimate(data, model, omega, learner, seed, alpha);
  } else {
    throw DataError("--method must be obigrad or plugin");
  }
  const std::string text = report.to_json().dump(2);
  if (out_path.empty()) {
    std::cout << text << "\n";
  } else {
    std::ofstream out(out_path);
    if (!out) throw DataError("cannot write " + out_path);
    out << text << "\n";
  }
  return 0;
}

ExperimentConfig build_config(const std::string& design, const std::string& config_path,
                              int reps, const std::string& out_dir, std::uint64_t seed,
                              bool has_seed) {
  ExperimentConfig config = default_config(design);
  if (!config_path.empty()) config = load_config_file(config_path, config);
  if (reps > 0) config.replications = reps;
  if (!out_dir.empty()) config.out_dir = out_dir;
  if (has_seed) config.master_seed = seed;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Orthogonal bilevel gradient estimation"};
  app.require_subcommand(1);

  // estimate
  std::string data_path, model_name, omega_text, method = "obigrad", features = "auto";
  std::string out_path;
  double alpha = 0.05, lambda = 1e-6, gamma = 0.8;
  int n_frequencies = 8;
  std::uint64_t seed = 20240801;
  auto* estimate = app.add_subcommand("estimate", "Estimate the bilevel gradient from CSV data");
  estimate->add_option("--data", data_path, "dataset CSV")->required();
  estimate->add_option("--model", model_name, "iv_sine | iv_linear | fqe_bellman")->required();
  estimate->add_option("--omega", omega_text, "evaluation point, comma separated")->required();
  estimate->add_option("--method", method, "obigrad | plugin");
  estimate->add_option("--alpha", alpha, "confidence level for the Wald intervals");
  estimate->add_option("--seed", seed, "fold-split seed");
  estimate->add_option("--features", features, "fourier_sum | fourier_linear | observable_sa");
  estimate->add_option("--frequencies", n_frequencies, "fourier frequency count");
  estimate->add_option("--lambda", lambda, "ridge parameter");
  estimate->add_option("--gamma", gamma, "discount factor for fqe_bellman");
  estimate->add_option("--out", out_path, "write the JSON report here instead of stdout");

  // experiment / sweep / root
  std::string design, config_path, out_dir;
  int reps = 0;
  std::uint64_t master_seed = 0;
  bool has_master_seed = false;
  auto add_common = [&](CLI::App* cmd, bool need_design) {
    if (need_design) {
      cmd->add_option("design", design,
                      "iv_gradient | iv_wald | iv_kbo | iv_root | fqe_gradient | fqe_wald | "
                      "fqe_root | fqe_kbo")
          ->required();
    }
    cmd->add_option("--config", config_path, "flat key = value config file");
    cmd->add_option("--reps", reps, "replication count override");
    cmd->add_option("--out", out_dir, "output directory override");
    cmd->add_option("--seed", master_seed, "master seed override")
        ->each([&](const std::string&) { has_master_seed = true; });
  };
  auto* experiment =
      app.add_subcommand("experiment", "Run a Monte Carlo experiment and emit CSV tables");
  add_common(experiment, true);
  auto* sweep = app.add_subcommand("sweep", "Uniform omega-grid error sweep");
  add_common(sweep, true);
  auto* root = app.add_subcommand("root", "Root-estimation experiment");
  add_common(root, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (estimate->parsed()) {
      return run_estimate(data_path, model_name, omega_text, method, alpha, seed, features,
                          n_frequencies, lambda, gamma, out_path);
    }
    if (experiment->parsed()) {
      ExperimentConfig config =
          build_config(design, config_path, reps, out_dir, master_seed, has_master_seed);
      if (design == "iv_kbo" || design == "fqe_kbo") {
        emit_reports(run_kbo_experiment(config), config.out_dir);
      } else if (design == "iv_root" || design == "fqe_root") {
        emit_reports(run_root_experiment(config), config.out_dir);
      } else {
        emit_reports(run_gradient_experiment(config), config.out_dir);
      }
      std::cout << "wrote " << config.out_dir << "\n";
      return 0;
    }
    if (sweep->parsed()) {
      ExperimentConfig config =
          build_config(design, config_path, reps, out_dir, master_seed, has_master_seed);
      if (config.sample_sizes.size() > 2 && config_path.empty()) {
        config.sample_sizes = {400, 1600};
      }
      emit_reports(run_sweep(config), config.out_dir);
      std::cout << "wrote " << config.out_dir << "\n";
      return 0;
    }
    if (root->parsed()) {
      ExperimentConfig config =
          build_config(design, config_path, reps, out_dir, master_seed, has_master_seed);
      emit_reports(run_root_experiment(config), config.out_dir);
      std::cout << "wrote " << config.out_dir << "\n";
      return 0;
    }
  } catch (const std::exception& ex) {
    nlohmann::json err;
    err["error"] = ex.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
