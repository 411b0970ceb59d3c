#include <doctest.h>

#include <cmath>

#include "obigrad/stats.hpp"

using namespace obigrad;

TEST_CASE("normal quantile matches reference values") {
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-9));
  CHECK(normal_quantile(0.025) == doctest::Approx(-1.959963984540054).epsilon(1e-9));
  CHECK(normal_quantile(0.995) == doctest::Approx(2.5758293035489004).epsilon(1e-9));
  CHECK(normal_quantile(1e-10) == doctest::Approx(-6.361340902404056).epsilon(1e-8));
  CHECK_THROWS(normal_quantile(0.0));
  CHECK_THROWS(normal_quantile(1.0));
}

TEST_CASE("quantile and cdf are inverse") {
  for (double p : {0.001, 0.05, 0.31, 0.5, 0.77, 0.99, 0.99999}) {
    CHECK(normal_cdf(normal_quantile(p)) == doctest::Approx(p).epsilon(1e-10));
  }
}

TEST_CASE("gauss-hermite integrates gaussian moments") {
  const GaussHermiteRule rule = gauss_hermite_normal(64);
  CHECK(rule.weights.sum() == doctest::Approx(1.0).epsilon(1e-13));
  double m1 = 0, m2 = 0, m4 = 0, msin = 0;
  for (int i = 0; i < 64; ++i) {
    const double s = rule.nodes[i], w = rule.weights[i];
    m1 += w * s;
    m2 += w * s * s;
    m4 += w * s * s * s * s;
    msin += w * std::sin(s + 0.7);
  }
  CHECK(m1 == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(m2 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m4 == doctest::Approx(3.0).epsilon(1e-11));
  // E[sin(S + c)] = exp(-1/2) sin(c)
  CHECK(msin == doctest::Approx(std::exp(-0.5) * std::sin(0.7)).epsilon(1e-12));
}

TEST_CASE("rng streams are deterministic and well scaled") {
  Rng a(123), b(123), c(124);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 1000; ++i) {
    const double x = a.normal(), y = b.normal(), z = c.normal();
    all_equal = all_equal && (x == y);
    any_diff = any_diff || (x != z);
  }
  CHECK(all_equal);
  CHECK(any_diff);

  Rng rng(7);
  double mean = 0, var = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    mean += x / n;
    var += x * x / n;
  }
  CHECK(std::abs(mean) < 4.0 / std::sqrt(static_cast<double>(n)));
  CHECK(var == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("derived seeds separate streams") {
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
  CHECK(derive_seed(1, 2, 3) != derive_seed(2, 2, 3));
  CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
}
