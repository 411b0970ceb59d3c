#pragma once

#include <cstdint>
#include <functional>

#include "obigrad/types.hpp"

namespace obigrad {

// Closed-form description of a synthetic design: the population gradient, the
// true nuisances, and a sampler for the X marginal (used by evaluation sets
// and population-level targets). Both designs here are affine,
// psi(omega) = gradient_matrix * (omega - omega_star).
struct GroundTruth {
  Vec omega_star;
  Mat gradient_matrix;
  std::function<Vec(const Vec& omega)> psi;
  std::function<NuisanceSet(const Vec& omega)> oracle_nuisances;
  std::function<Mat(int n, std::uint64_t seed)> sample_x;
};

// Sine-instrument design: X ~ N(0, I_p), Z = 2 sum X + eta scalar,
// g_omega(Z) = omega . (sin(Z+1), ..., sin(Z+d)). The scalar variant used for
// root finding has g_omega(Z) = omega Z instead.
struct IvDesign {
  int p = 3;
  int d = 4;
  double sigma_z2 = 0.1;
  double y_noise_sd = 0.25;  // independent Gaussian outcome noise
  double eta_coef = 0.0;     // adds eta_coef * eta to Y, correlating noise with Z
  bool scalar = false;
  Vec omega_star;
};

IvDesign iv_design_gradient();  // Y = w*.phi(Z) + N(0, 0.25^2)
IvDesign iv_design_kbo();       // Y = w*.phi(Z) + 0.5 eta
IvDesign iv_design_root();      // scalar: Y = w* Z + 0.5 eta + N(0, 0.1^2), w* = 2

// Fixed non-stationary evaluation point omega_0.
Vec iv_omega_eval(const IvDesign& design);

Dataset iv_sample(const IvDesign& design, int n, std::uint64_t seed);
StructuralModel iv_structural_model(const IvDesign& design);
GroundTruth iv_ground_truth(const IvDesign& design);

// Projected Bellman-backup design: X = (S, A), Z = (S, A, R, S'),
// S' = rho S + tau A + xi, R = sin S + 0.5 A + 0.25 S A + eps_R,
// g_omega(Z) = R + gamma omega . phi(S').
struct FqeDesign {
  double rho = 0.7;
  double tau = 0.5;
  double sigma_s = 0.2;
  double gamma = 0.8;
  double r_noise_sd = 0.1;
  double y_noise_sd = 0.25;
  bool logistic_policy = false;  // P(A=1|S) = logistic(0.5 S) instead of 1/2
  int n_features = 4;            // 4: (sin, cos, id, square); 2: (sin, cos)
  Vec omega_star;
};

FqeDesign fqe_design_gradient();  // gamma = 0.8, Bernoulli(1/2) policy
FqeDesign fqe_design_wald();      // gamma = 0.9, logistic policy
FqeDesign fqe_design_root();      // 2 features, omega* = (0.65, -0.45)

Vec fqe_omega_eval(const FqeDesign& design);

Dataset fqe_sample(const FqeDesign& design, int n, std::uint64_t seed);
StructuralModel fqe_structural_model(const FqeDesign& design);

// gamma * E[phi(S') | S=s, A=a], available in closed form because S'|S,A is
// Gaussian with mean mu = rho s + tau a and variance sigma_s^2.
Vec fqe_conditional_features(const FqeDesign& design, double s, double a);

// Population gradient matrix M = E[j* j*'] by Gauss-Hermite quadrature over
// S ~ N(0,1) and exact summation over the two actions.
GroundTruth fqe_ground_truth(const FqeDesign& design, int quadrature_nodes = 64);

}  // namespace obigrad
