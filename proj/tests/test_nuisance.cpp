#include <doctest.h>

#include <cmath>

#include "obigrad/dgp.hpp"
#include "obigrad/estimator.hpp"
#include "obigrad/nuisance.hpp"

using namespace obigrad;

TEST_CASE("fourier_sum features at zero") {
  FeatureMap map = FeatureMap::fourier_sum();
  CHECK(map.dim() == 17);
  Vec x = Vec::Zero(3);
  Vec f = map(x);
  CHECK(f[0] == 1.0);
  for (int k = 1; k <= 8; ++k) {
    CHECK(f[2 * k - 1] == 0.0);  // sin
    CHECK(f[2 * k] == 1.0);      // cos
  }
  // batch form agrees with pointwise evaluation
  Mat xs(2, 3);
  xs << 0.3, -0.7, 1.1, 0, 0, 0;
  Mat batch = map.matrix(xs);
  CHECK((batch.row(0).transpose() - map(xs.row(0).transpose())).norm() < 1e-14);
  CHECK((batch.row(1).transpose() - map(xs.row(1).transpose())).norm() < 1e-14);

  FeatureMap linear = FeatureMap::fourier_sum(8, true);
  CHECK(linear.dim() == 18);
  CHECK(linear(xs.row(0).transpose())[17] == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("observable_sa basis at the origin") {
  FeatureMap map = FeatureMap::observable_sa();
  CHECK(map.dim() == 9);
  Vec f = map(Vec::Zero(2));
  Vec expected(9);
  expected << 1, 0, 0, 0, 1, 0, 0, 0, 0;
  CHECK((f - expected).norm() == 0.0);
  CHECK_THROWS_AS(map(Vec::Zero(3)), ShapeError);
}

TEST_CASE("rff features are deterministic in the seed") {
  FeatureMap a = FeatureMap::rff_gaussian(3, 0.5, 64, 9);
  FeatureMap b = FeatureMap::rff_gaussian(3, 0.5, 64, 9);
  FeatureMap c = FeatureMap::rff_gaussian(3, 0.5, 64, 10);
  Vec x(3);
  x << 0.2, -1.0, 0.4;
  CHECK((a(x) - b(x)).norm() == 0.0);
  CHECK((a(x) - c(x)).norm() > 0.0);
}

TEST_CASE("ridge_fit solves the examples") {
  Mat design(2, 2);
  design << 1, 0, 1, 1;
  Mat targets(2, 1);
  targets << 0, 1;
  RidgeSolution exact = ridge_fit(design, targets, 0.0, true);
  CHECK(exact.beta(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(exact.beta(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_FALSE(exact.condition_warning);

  // huge penalty with an unpenalized intercept: slope -> 0, intercept -> mean
  Mat xs(4, 2);
  xs << 1, -1, 1, 0, 1, 1, 1, 2;
  Mat ys(4, 1);
  ys << 0.0, 1.0, 2.0, 3.0;
  RidgeSolution shrunk = ridge_fit(xs, ys, 1e9, true, 0);
  CHECK(std::abs(shrunk.beta(1, 0)) < 1e-6);
  CHECK(shrunk.beta(0, 0) == doctest::Approx(1.5).epsilon(1e-6));

  // singular design at lambda = 0 falls back to the minimum-norm solution
  Mat dup(3, 2);
  dup << 1, 1, 2, 2, -1, -1;
  Mat t(3, 1);
  t << 2, 4, -2;
  RidgeSolution mn = ridge_fit(dup, t, 0.0, false);
  CHECK(mn.condition_warning);
  CHECK(mn.beta(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(mn.beta(1, 0) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("ridge_fit satisfies the normal equations") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 40, p = 7, t = 3;
    Mat design(n, p), targets(n, t);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < p; ++c) design(i, c) = rng.normal();
      for (int c = 0; c < t; ++c) targets(i, c) = rng.normal();
    }
    design.col(0).setOnes();
    const double lambda = trial % 2 ? 1e-6 : 0.37;
    const bool free_intercept = trial % 3 != 0;
    RidgeSolution sol = ridge_fit(design, targets, lambda, free_intercept, 0);
    Mat penalized = design.transpose() * design;
    penalized.diagonal().array() += lambda * n;
    if (free_intercept) penalized(0, 0) -= lambda * n;
    const Mat rhs = design.transpose() * targets;
    const double resid = (penalized * sol.beta - rhs).norm();
    CHECK(resid <= 1e-8 * rhs.norm());
  }
}

TEST_CASE("constant structural map is fit exactly with a free intercept") {
  StructuralModel model;
  model.dim_omega = 1;
  model.dim_out = 1;
  model.g = [](const Vec&, const Vec&) { return Vec::Constant(1, 2.5); };
  model.dg = [](const Vec&, const Vec&) { return Mat::Zero(1, 1); };

  Dataset data = iv_sample(iv_design_gradient(), 50, 4);
  LearnerConfig config;
  NuisanceSet eta = fit_nuisances(data, model, Vec::Zero(1), config);
  Mat h = eta.h(data.x.topRows(10));
  CHECK((h.array() - 2.5).abs().maxCoeff() < 1e-9);
}

TEST_CASE("fourier ridge recovers the sine conditional mean on the IV design") {
  // j*_l(X) = exp(-sigma_z^2/2) sin(2 sum x + l); fit on N = 5000, L2 < 0.05
  IvDesign design = iv_design_gradient();
  GroundTruth truth = iv_ground_truth(design);
  StructuralModel model = iv_structural_model(design);
  const Vec omega = iv_omega_eval(design);
  Dataset data = iv_sample(design, 5000, 21);
  NuisanceSet eta = fit_nuisances(data, model, omega, LearnerConfig{});
  Mat eval_x = truth.sample_x(50000, 77);
  NuisanceErrors err = nuisance_errors(eta, truth.oracle_nuisances(omega), eval_x);
  CHECK(err.j_err < 0.05);
  CHECK(err.h_err < 0.05);
}

TEST_CASE("nuisance errors shrink with N and the product shrinks faster") {
  IvDesign design = iv_design_gradient();
  GroundTruth truth = iv_ground_truth(design);
  StructuralModel model = iv_structural_model(design);
  const Vec omega = iv_omega_eval(design);
  const NuisanceSet oracle = truth.oracle_nuisances(omega);
  const Mat eval_x = truth.sample_x(20000, 5);

  const std::vector<int> sizes{200, 400, 800, 1600, 3200};
  const int reps = 6;
  std::vector<double> h(sizes.size(), 0.0), j(sizes.size(), 0.0), m(sizes.size(), 0.0);
  std::vector<double> h_se(sizes.size(), 0.0);
  for (std::size_t si = 0; si < sizes.size(); ++si) {
    std::vector<double> hs;
    for (int r = 0; r < reps; ++r) {
      Dataset data = iv_sample(design, sizes[si], derive_seed(123, sizes[si], r));
      NuisanceSet eta = fit_nuisances(data, model, omega, LearnerConfig{});
      NuisanceErrors err = nuisance_errors(eta, oracle, eval_x);
      h[si] += err.h_err / reps;
      j[si] += err.j_err / reps;
      m[si] += err.m_err / reps;
      hs.push_back(err.h_err);
    }
    double var = 0;
    for (double v : hs) var += (v - h[si]) * (v - h[si]) / (reps - 1);
    h_se[si] = std::sqrt(var / reps);
  }
  for (std::size_t si = 1; si < sizes.size(); ++si) {
    CHECK(h[si] <= h[si - 1] + 2 * (h_se[si] + h_se[si - 1]));
    CHECK(j[si] <= j[si - 1] * 1.15);
    CHECK(m[si] <= m[si - 1] * 1.15);
    // product proxy shrinks faster than each individual error
    const double ratio_product =
        (j[si] * (h[si] + m[si])) / (j[si - 1] * (h[si - 1] + m[si - 1]));
    const double worst_individual =
        std::max({h[si] / h[si - 1], j[si] / j[si - 1], m[si] / m[si - 1]});
    CHECK(ratio_product < worst_individual);
  }
}

TEST_CASE("fold learner refits match one-shot fits") {
  IvDesign design = iv_design_gradient();
  StructuralModel model = iv_structural_model(design);
  Dataset data = iv_sample(design, 100, 8);
  FoldLearner learner(data, model, LearnerConfig{});
  const Vec w1 = iv_omega_eval(design);
  const Vec w2 = design.omega_star;
  NuisanceSet cached = learner.fit(w1);
  NuisanceSet direct = fit_nuisances(data, model, w1, LearnerConfig{});
  Mat probe = data.x.topRows(20);
  CHECK((cached.h(probe) - direct.h(probe)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((cached.j(probe) - direct.j(probe)).cwiseAbs().maxCoeff() < 1e-12);
  // refit at another omega changes h but not m
  NuisanceSet other = learner.fit(w2);
  CHECK((cached.m(probe) - other.m(probe)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((cached.h(probe) - other.h(probe)).cwiseAbs().maxCoeff() > 1e-4);
}
