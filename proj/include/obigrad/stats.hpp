#pragma once

#include <cmath>
#include <cstdint>

#include <Eigen/Dense>

namespace obigrad {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// SplitMix64 finalizer; used to derive independent seed streams.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Stream seed for (master, a, b), e.g. (master seed, sample size, replication).
// Replication streams do not depend on execution order.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  return mix64(master ^ mix64(a ^ mix64(b + 0x5851f42d4c957f2dULL)));
}

// Deterministic RNG (xorshift128+ seeded through SplitMix64). Normal deviates
// use an explicit Box-Muller transform so streams reproduce bit-identically
// across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    s0_ = mix64(seed);
    s1_ = mix64(seed + 0x9e3779b97f4a7c15ULL);
    if (s0_ == 0 && s1_ == 0) s1_ = 1;
  }

  std::uint64_t next_u64() {
    std::uint64_t x = s0_;
    const std::uint64_t y = s1_;
    s0_ = y;
    x ^= x << 23;
    s1_ = x ^ y ^ (x >> 17) ^ (y >> 26);
    return s1_ + y;
  }

  // uniform on [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  Vec normal_vec(int n) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t s0_ = 0, s1_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Standard normal CDF.
double normal_cdf(double x);

// Inverse standard normal CDF (Wichura's AS 241; absolute error below 1e-15
// over the usual range, well inside the 1e-9 budget for Wald quantiles).
double normal_quantile(double p);

// Gauss-Hermite rule transformed to integrate against the N(0,1) density:
// sum_i weights[i] * f(nodes[i]) approximates E[f(S)] for S ~ N(0,1).
struct GaussHermiteRule {
  Vec nodes;
  Vec weights;
};
GaussHermiteRule gauss_hermite_normal(int n);

}  // namespace obigrad
