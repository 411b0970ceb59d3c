#pragma once

// Discrete test distribution with exactly computable population quantities:
// X uniform on five atoms, Z two-valued given X, Y a deterministic function
// of (X, Z). Conditional means come from enumeration, so population identities
// can be checked to machine precision.

#include <cmath>
#include <functional>
#include <stdexcept>

#include "obigrad/estimator.hpp"
#include "obigrad/types.hpp"

namespace obigrad::testsupport {

struct FiniteSupportInstance {
  static constexpr int n_atoms = 5;
  Mat atoms;     // 5 x 2 support of X
  Vec z_lo, z_hi;  // two Z atoms per X atom
  Vec p_lo;        // P(Z = z_lo | X)
  StructuralModel model;  // d = 2, q = 1
  Vec omega;

  FiniteSupportInstance() {
    atoms.resize(n_atoms, 2);
    atoms << 0.1, -0.4, 0.7, 0.2, -0.9, 0.5, 1.3, -1.1, 0.4, 0.8;
    z_lo.resize(n_atoms);
    z_hi.resize(n_atoms);
    p_lo.resize(n_atoms);
    z_lo << -0.8, 0.3, 1.1, -0.2, 0.6;
    z_hi << 0.9, 1.7, -0.5, 1.2, -1.4;
    p_lo << 0.3, 0.55, 0.7, 0.45, 0.6;

    model.dim_omega = 2;
    model.dim_out = 1;
    model.g = [](const Vec& w, const Vec& z) {
      return Vec::Constant(1, w[0] * std::sin(z[0]) + w[1] * std::cos(z[0]));
    };
    model.dg = [](const Vec&, const Vec& z) {
      Mat grad(2, 1);
      grad(0, 0) = std::sin(z[0]);
      grad(1, 0) = std::cos(z[0]);
      return grad;
    };
    omega.resize(2);
    omega << 0.8, -0.6;
  }

  double outcome(int atom, double z) const {
    return 1.0 + 0.3 * std::sin(z) + atoms(atom, 0) - 0.2 * z;
  }

  int atom_index(const Vec& x) const {
    for (int i = 0; i < n_atoms; ++i) {
      if ((atoms.row(i).transpose() - x).norm() < 1e-12) return i;
    }
    throw std::logic_error("finite-support lookup off the atom set");
  }

  // Exact conditional means by enumeration over the two Z atoms.
  Vec h_star() const { return conditional([&](int i, double z) { return g_value(i, z); }); }
  Vec m_star() const { return conditional([&](int i, double z) { return outcome(i, z); }); }
  Mat j_star() const {  // 5 x 2
    Mat j(n_atoms, 2);
    for (int k = 0; k < 2; ++k) {
      const Vec col = conditional([&](int i, double z) {
        (void)i;
        Vec zz = Vec::Constant(1, z);
        return model.dg(omega, zz)(k, 0);
      });
      j.col(k) = col;
    }
    return j;
  }

  // Tabulated nuisance set over the atoms; j_table is 5 x 2 (q = 1).
  NuisanceSet tabulated(const Vec& h_table, const Mat& j_table, const Vec& m_table) const {
    NuisanceSet eta;
    eta.dim_omega = 2;
    eta.dim_out = 1;
    const auto* self = this;
    auto lookup = [self](const Mat& xs, const Mat& table) {
      Mat out(xs.rows(), table.cols());
      for (Eigen::Index r = 0; r < xs.rows(); ++r) {
        out.row(r) = table.row(self->atom_index(xs.row(r).transpose()));
      }
      return out;
    };
    eta.h = [lookup, h_table](const Mat& xs) { return lookup(xs, h_table); };
    eta.j = [lookup, j_table](const Mat& xs) { return lookup(xs, j_table); };
    eta.m = [lookup, m_table](const Mat& xs) { return lookup(xs, m_table); };
    return eta;
  }

  NuisanceSet oracle() const { return tabulated(h_star(), j_star(), m_star()); }

  // Population gradient Psi_k = E[(h* - m*) j*_k].
  Vec psi() const {
    const Vec diff = h_star() - m_star();
    const Mat j = j_star();
    Vec out(2);
    for (int k = 0; k < 2; ++k) out[k] = (diff.array() * j.col(k).array()).mean();
    return out;
  }

  // Exact population mean of the doubly robust pseudo-outcome under eta.
  Vec population_pseudo_outcome(const NuisanceSet& eta) const {
    Vec acc = Vec::Zero(2);
    for (int i = 0; i < n_atoms; ++i) {
      for (int side = 0; side < 2; ++side) {
        const double z = side == 0 ? z_lo[i] : z_hi[i];
        const double pz = side == 0 ? p_lo[i] : 1.0 - p_lo[i];
        Observation o{atoms.row(i).transpose(), Vec::Constant(1, outcome(i, z)),
                      Vec::Constant(1, z)};
        acc += (pz / n_atoms) * pseudo_outcome(o, eta, model, omega);
      }
    }
    return acc;
  }

  // Exact population mean of the plug-in score under (h, v).
  Vec population_plugin_score(const NuisanceSet& eta) const {
    Vec acc = Vec::Zero(2);
    for (int i = 0; i < n_atoms; ++i) {
      for (int side = 0; side < 2; ++side) {
        const double z = side == 0 ? z_lo[i] : z_hi[i];
        const double pz = side == 0 ? p_lo[i] : 1.0 - p_lo[i];
        Observation o{atoms.row(i).transpose(), Vec::Constant(1, outcome(i, z)),
                      Vec::Constant(1, z)};
        acc += (pz / n_atoms) * plugin_score(o, eta);
      }
    }
    return acc;
  }

  // Exact L2(P_X) inner product of two atom tables (columns resp. vectors).
  double inner(const Vec& a, const Vec& b) const { return (a.array() * b.array()).mean(); }

 private:
  double g_value(int i, double z) const {
    (void)i;
    Vec zz = Vec::Constant(1, z);
    return model.g(omega, zz)[0];
  }

  template <typename F>
  Vec conditional(F&& value) const {
    Vec out(n_atoms);
    for (int i = 0; i < n_atoms; ++i) {
      out[i] = p_lo[i] * value(i, z_lo[i]) + (1.0 - p_lo[i]) * value(i, z_hi[i]);
    }
    return out;
  }
};

}  // namespace obigrad::testsupport
