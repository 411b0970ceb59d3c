#include <doctest.h>

#include <cmath>

#include "obigrad/dgp.hpp"
#include "obigrad/kbo.hpp"

using namespace obigrad;

namespace {

KernelConfig exact_cfg(double lambda, double bandwidth = 0.5) {
  KernelConfig cfg;
  cfg.mode = KernelConfig::Mode::exact_gaussian;
  cfg.bandwidth = bandwidth;
  cfg.lambda = lambda;
  return cfg;
}

}  // namespace

TEST_CASE("kernel ridge collapses to zero as lambda grows") {
  IvDesign design = iv_design_gradient();
  StructuralModel model = iv_structural_model(design);
  Dataset data = iv_sample(design, 200, 3);
  const Vec omega = iv_omega_eval(design);
  KernelInnerFit fit = kbo_fit_inner(data, model, omega, exact_cfg(1e9));
  CHECK(fit.h(data.x.topRows(50)).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(fit.j(data.x.topRows(50)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("gram cap directs large problems to rff mode") {
  IvDesign design = iv_design_gradient();
  StructuralModel model = iv_structural_model(design);
  Dataset data = iv_sample(design, 128, 3);
  KernelConfig cfg = exact_cfg(1e-3);
  cfg.gram_cap = 100;
  try {
    kbo_fit_inner(data, model, iv_omega_eval(design), cfg);
    FAIL("expected SizingError");
  } catch (const SizingError& ex) {
    CHECK(std::string(ex.what()).find("rff") != std::string::npos);
  }
}

TEST_CASE("rff mode approaches the exact solve") {
  IvDesign design = iv_design_gradient();
  StructuralModel model = iv_structural_model(design);
  const Vec omega = iv_omega_eval(design);
  Dataset data = iv_sample(design, 300, 5);
  Dataset probe = iv_sample(design, 400, 6);

  KernelConfig exact = exact_cfg(1e-3);
  KernelInnerFit fit_exact = kbo_fit_inner(data, model, omega, exact);

  KernelConfig rff = exact;
  rff.mode = KernelConfig::Mode::rff;
  rff.rff_features = 4096;
  rff.seed = 99;
  KernelInnerFit fit_rff = kbo_fit_inner(data, model, omega, rff);

  const Mat h_diff = fit_exact.h(probe.x) - fit_rff.h(probe.x);
  CHECK(std::sqrt(h_diff.array().square().mean()) <= 0.02);
  const Vec g_exact = kbo_gradient(data, model, omega, exact);
  const Vec g_rff = kbo_gradient(data, model, omega, rff);
  CHECK((g_exact - g_rff).norm() <= 0.02);
}

TEST_CASE("interpolation limit matches the plug-in score at the data") {
  IvDesign design = iv_design_gradient();
  StructuralModel model = iv_structural_model(design);
  const Vec omega = iv_omega_eval(design);
  Dataset data = iv_sample(design, 150, 8);

  // bandwidth 0.5 keeps the Gram well conditioned, so lambda -> 0 interpolates
  const Vec grad = kbo_gradient(data, model, omega, exact_cfg(1e-12));
  const Mat g = model.values(omega, data.z);
  const Mat dg = model.gradients(omega, data.z);
  Vec plugin(4);
  for (int k = 0; k < 4; ++k) {
    plugin[k] = ((g - data.y).array() * dg.col(k).array()).mean();
  }
  CHECK((grad - plugin).norm() < 1e-4);
}

TEST_CASE("triangle decomposition holds replication-wise") {
  IvDesign design = iv_design_kbo();
  GroundTruth truth = iv_ground_truth(design);
  StructuralModel model = iv_structural_model(design);
  const Vec omega = iv_omega_eval(design);
  const Vec psi = truth.psi(omega);
  KernelConfig cfg = exact_cfg(1e-3);
  const Vec psi_lambda = regularized_target(model, omega, cfg, truth, 1500, 31);
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
    Dataset data = iv_sample(design, 400, seed);
    const Vec grad = kbo_gradient(data, model, omega, cfg);
    CHECK((grad - psi).norm() <= (grad - psi_lambda).norm() + (psi_lambda - psi).norm() + 1e-12);
  }
}

TEST_CASE("regularized target approaches the population gradient as lambda -> 0") {
  IvDesign design = iv_design_kbo();
  GroundTruth truth = iv_ground_truth(design);
  StructuralModel model = iv_structural_model(design);
  const Vec omega = iv_omega_eval(design);
  KernelConfig cfg = exact_cfg(1e-6);
  cfg.gram_cap = 3000;
  const Vec psi_lambda = regularized_target(model, omega, cfg, truth, 3000, 11);
  CHECK((psi_lambda - truth.psi(omega)).norm() <= 0.01);
}

TEST_CASE("regularization bias grows with lambda") {
  IvDesign design = iv_design_kbo();
  GroundTruth truth = iv_ground_truth(design);
  StructuralModel model = iv_structural_model(design);
  const Vec omega = iv_omega_eval(design);
  const Vec psi = truth.psi(omega);
  double last = 0.0;
  for (double lambda : {1e-3, 1e-2, 1e-1}) {
    KernelConfig cfg = exact_cfg(lambda);
    const double bias = (regularized_target(model, omega, cfg, truth, 1500, 7) - psi).norm();
    CHECK(bias >= last);
    last = bias;
  }
}

TEST_CASE("kernel config validation") {
  IvDesign design = iv_design_gradient();
  StructuralModel model = iv_structural_model(design);
  Dataset data = iv_sample(design, 50, 3);
  KernelConfig bad = exact_cfg(0.0);
  CHECK_THROWS_AS(kbo_fit_inner(data, model, iv_omega_eval(design), bad), NumericalError);
  bad = exact_cfg(1e-3);
  bad.bandwidth = -1.0;
  CHECK_THROWS_AS(kbo_fit_inner(data, model, iv_omega_eval(design), bad), NumericalError);
}
