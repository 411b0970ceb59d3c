#include "obigrad/dgp.hpp"

#include <cmath>

namespace obigrad {

namespace {

Vec normalized(std::initializer_list<double> entries) {
  Vec v(static_cast<Eigen::Index>(entries.size()));
  int i = 0;
  for (double e : entries) v[i++] = e;
  return v / v.norm();
}

double logistic(double t) { return 1.0 / (1.0 + std::exp(-t)); }

}  // namespace

IvDesign iv_design_gradient() {
  IvDesign design;
  design.omega_star = normalized({1.0, 2.0, 3.0, 4.0});
  return design;
}

IvDesign iv_design_kbo() {
  IvDesign design = iv_design_gradient();
  design.y_noise_sd = 0.0;
  design.eta_coef = 0.5;
  return design;
}

IvDesign iv_design_root() {
  IvDesign design;
  design.scalar = true;
  design.d = 1;
  design.y_noise_sd = 0.1;
  design.eta_coef = 0.5;
  design.omega_star = Vec::Constant(1, 2.0);
  return design;
}

Vec iv_omega_eval(const IvDesign& design) {
  if (design.scalar) return Vec::Constant(1, 2.5);
  return design.omega_star + 0.35 * normalized({1.0, 1.0 / 3.0, -1.0 / 3.0, -1.0});
}

Dataset iv_sample(const IvDesign& design, int n, std::uint64_t seed) {
  if (n < 1) throw SizingError("iv_sample: need n >= 1");
  Rng rng(seed);
  const double sigma_z = std::sqrt(design.sigma_z2);
  Dataset data;
  data.x.resize(n, design.p);
  data.y.resize(n, 1);
  data.z.resize(n, 1);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int c = 0; c < design.p; ++c) {
      data.x(i, c) = rng.normal();
      s += data.x(i, c);
    }
    const double eta = sigma_z * rng.normal();
    const double z = 2.0 * s + eta;
    data.z(i, 0) = z;
    double y = design.eta_coef * eta;
    if (design.y_noise_sd > 0.0) y += design.y_noise_sd * rng.normal();
    if (design.scalar) {
      y += design.omega_star[0] * z;
    } else {
      for (int l = 1; l <= design.d; ++l) y += design.omega_star[l - 1] * std::sin(z + l);
    }
    data.y(i, 0) = y;
  }
  return data;
}

StructuralModel iv_structural_model(const IvDesign& design) {
  StructuralModel model;
  model.dim_omega = design.d;
  model.dim_out = 1;
  if (design.scalar) {
    model.g = [](const Vec& omega, const Vec& z) { return Vec::Constant(1, omega[0] * z[0]); };
    model.dg = [](const Vec&, const Vec& z) { return Mat::Constant(1, 1, z[0]); };
  } else {
    const int d = design.d;
    model.g = [d](const Vec& omega, const Vec& z) {
      double v = 0.0;
      for (int l = 1; l <= d; ++l) v += omega[l - 1] * std::sin(z[0] + l);
      return Vec::Constant(1, v);
    };
    model.dg = [d](const Vec&, const Vec& z) {
      Mat grad(d, 1);
      for (int l = 1; l <= d; ++l) grad(l - 1, 0) = std::sin(z[0] + l);
      return grad;
    };
  }
  return model;
}

GroundTruth iv_ground_truth(const IvDesign& design) {
  GroundTruth truth;
  truth.omega_star = design.omega_star;
  const int p = design.p;
  const int d = design.d;

  if (design.scalar) {
    truth.gradient_matrix = Mat::Constant(1, 1, 4.0 * p);
  } else {
    // A_kl = exp(-sigma_z^2)/2 * (cos(k-l) - exp(-8p) cos(k+l))
    Mat a(d, d);
    const double scale = std::exp(-design.sigma_z2) / 2.0;
    const double cross = std::exp(-8.0 * p);
    for (int k = 1; k <= d; ++k) {
      for (int l = 1; l <= d; ++l) {
        a(k - 1, l - 1) = scale * (std::cos(k - l) - cross * std::cos(k + l));
      }
    }
    truth.gradient_matrix = a;
  }
  const Mat grad_matrix = truth.gradient_matrix;
  const Vec omega_star = design.omega_star;
  truth.psi = [grad_matrix, omega_star](const Vec& omega) -> Vec {
    return grad_matrix * (omega - omega_star);
  };

  const double attenuation = std::exp(-design.sigma_z2 / 2.0);
  const bool scalar = design.scalar;
  truth.oracle_nuisances = [d, scalar, attenuation, omega_star](const Vec& omega) {
    NuisanceSet eta;
    eta.dim_omega = d;
    eta.dim_out = 1;
    auto j_values = [d, scalar, attenuation](const Mat& xs) -> Mat {
      const Vec s = xs.rowwise().sum();
      Mat j(xs.rows(), d);
      if (scalar) {
        j.col(0) = 2.0 * s;
      } else {
        for (int l = 1; l <= d; ++l) j.col(l - 1) = attenuation * (2.0 * s.array() + l).sin();
      }
      return j;
    };
    eta.j = j_values;
    eta.h = [j_values, omega](const Mat& xs) -> Mat { return j_values(xs) * omega; };
    eta.m = [j_values, omega_star](const Mat& xs) -> Mat { return j_values(xs) * omega_star; };
    eta.joint = [j_values, omega, omega_star](const Mat& xs, Mat& h_out, Mat& j_out, Mat& m_out) {
      j_out = j_values(xs);
      h_out = j_out * omega;
      m_out = j_out * omega_star;
    };
    return eta;
  };

  truth.sample_x = [p](int n, std::uint64_t seed) -> Mat {
    Rng rng(seed);
    Mat xs(n, p);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < p; ++c) xs(i, c) = rng.normal();
    }
    return xs;
  };
  return truth;
}

FqeDesign fqe_design_gradient() {
  FqeDesign design;
  design.omega_star = Vec(4);
  design.omega_star << 0.55, -0.35, 0.25, 0.15;
  return design;
}

FqeDesign fqe_design_wald() {
  FqeDesign design = fqe_design_gradient();
  design.gamma = 0.9;
  design.logistic_policy = true;
  return design;
}

FqeDesign fqe_design_root() {
  FqeDesign design;
  design.n_features = 2;
  design.omega_star = Vec(2);
  design.omega_star << 0.65, -0.45;
  return design;
}

Vec fqe_omega_eval(const FqeDesign& design) {
  if (design.n_features == 2) {
    return design.omega_star + 0.35 * normalized({1.0, -0.5});
  }
  return design.omega_star + 0.35 * normalized({1.0, -0.5, 0.35, -0.25});
}

namespace {

// phi(s') for the continuation-value model.
Vec fqe_phi(int n_features, double s_next) {
  Vec phi(n_features);
  phi[0] = std::sin(s_next);
  phi[1] = std::cos(s_next);
  if (n_features == 4) {
    phi[2] = s_next;
    phi[3] = s_next * s_next;
  }
  return phi;
}

double fqe_policy_prob(const FqeDesign& design, double s) {
  return design.logistic_policy ? logistic(0.5 * s) : 0.5;
}

double fqe_reward_mean(double s, double a) { return std::sin(s) + 0.5 * a + 0.25 * s * a; }

}  // namespace

Dataset fqe_sample(const FqeDesign& design, int n, std::uint64_t seed) {
  if (n < 1) throw SizingError("fqe_sample: need n >= 1");
  if (design.n_features != 2 && design.n_features != 4) {
    throw ShapeError("fqe_sample: supported feature maps have 2 or 4 components");
  }
  Rng rng(seed);
  Dataset data;
  data.x.resize(n, 2);
  data.y.resize(n, 1);
  data.z.resize(n, 4);
  for (int i = 0; i < n; ++i) {
    const double s = rng.normal();
    const double a = rng.bernoulli(fqe_policy_prob(design, s)) ? 1.0 : 0.0;
    const double s_next = design.rho * s + design.tau * a + design.sigma_s * rng.normal();
    const double r = fqe_reward_mean(s, a) + design.r_noise_sd * rng.normal();
    const double v_star = design.omega_star.dot(fqe_phi(design.n_features, s_next));
    const double y = r + design.gamma * v_star + design.y_noise_sd * rng.normal();
    data.x(i, 0) = s;
    data.x(i, 1) = a;
    data.z(i, 0) = s;
    data.z(i, 1) = a;
    data.z(i, 2) = r;
    data.z(i, 3) = s_next;
    data.y(i, 0) = y;
  }
  return data;
}

StructuralModel fqe_structural_model(const FqeDesign& design) {
  StructuralModel model;
  model.dim_omega = design.n_features;
  model.dim_out = 1;
  const double gamma = design.gamma;
  const int nf = design.n_features;
  model.g = [gamma, nf](const Vec& omega, const Vec& z) {
    return Vec::Constant(1, z[2] + gamma * omega.dot(fqe_phi(nf, z[3])));
  };
  model.dg = [gamma, nf](const Vec&, const Vec& z) -> Mat {
    return gamma * fqe_phi(nf, z[3]);
  };
  return model;
}

Vec fqe_conditional_features(const FqeDesign& design, double s, double a) {
  const double mu = design.rho * s + design.tau * a;
  const double var = design.sigma_s * design.sigma_s;
  const double attenuation = std::exp(-var / 2.0);
  Vec out(design.n_features);
  out[0] = attenuation * std::sin(mu);
  out[1] = attenuation * std::cos(mu);
  if (design.n_features == 4) {
    out[2] = mu;
    out[3] = mu * mu + var;
  }
  return out * design.gamma;
}

GroundTruth fqe_ground_truth(const FqeDesign& design, int quadrature_nodes) {
  if (quadrature_nodes < 16) {
    throw SizingError("fqe_ground_truth: need at least 16 quadrature nodes");
  }
  const int d = design.n_features;
  GroundTruth truth;
  truth.omega_star = design.omega_star;

  const GaussHermiteRule rule = gauss_hermite_normal(quadrature_nodes);
  Mat m = Mat::Zero(d, d);
  for (int i = 0; i < quadrature_nodes; ++i) {
    const double s = rule.nodes[i];
    const double p1 = fqe_policy_prob(design, s);
    for (int a = 0; a <= 1; ++a) {
      const double weight = rule.weights[i] * (a == 1 ? p1 : 1.0 - p1);
      const Vec j = fqe_conditional_features(design, s, a);
      m += weight * (j * j.transpose());
    }
  }
  truth.gradient_matrix = m;
  const Vec omega_star = design.omega_star;
  truth.psi = [m, omega_star](const Vec& omega) -> Vec { return m * (omega - omega_star); };

  const FqeDesign captured = design;
  truth.oracle_nuisances = [captured, d, omega_star](const Vec& omega) {
    NuisanceSet eta;
    eta.dim_omega = d;
    eta.dim_out = 1;
    auto j_values = [captured, d](const Mat& xs) -> Mat {
      Mat j(xs.rows(), d);
      for (Eigen::Index i = 0; i < xs.rows(); ++i) {
        j.row(i) = fqe_conditional_features(captured, xs(i, 0), xs(i, 1)).transpose();
      }
      return j;
    };
    auto reward = [](const Mat& xs) -> Vec {
      Vec r(xs.rows());
      for (Eigen::Index i = 0; i < xs.rows(); ++i) r[i] = fqe_reward_mean(xs(i, 0), xs(i, 1));
      return r;
    };
    eta.j = j_values;
    eta.h = [j_values, reward, omega](const Mat& xs) -> Mat {
      return reward(xs) + (j_values(xs) * omega).eval();
    };
    eta.m = [j_values, reward, omega_star](const Mat& xs) -> Mat {
      return reward(xs) + (j_values(xs) * omega_star).eval();
    };
    eta.joint = [j_values, reward, omega, omega_star](const Mat& xs, Mat& h_out, Mat& j_out,
                                                      Mat& m_out) {
      j_out = j_values(xs);
      const Vec r = reward(xs);
      h_out = r + (j_out * omega).eval();
      m_out = r + (j_out * omega_star).eval();
    };
    return eta;
  };

  truth.sample_x = [captured](int n, std::uint64_t seed) -> Mat {
    Rng rng(seed);
    Mat xs(n, 2);
    for (int i = 0; i < n; ++i) {
      const double s = rng.normal();
      xs(i, 0) = s;
      xs(i, 1) = rng.bernoulli(fqe_policy_prob(captured, s)) ? 1.0 : 0.0;
    }
    return xs;
  };
  return truth;
}

}  // namespace obigrad
