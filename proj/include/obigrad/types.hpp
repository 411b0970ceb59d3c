#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "obigrad/stats.hpp"

namespace obigrad {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SizingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One sampled triple O = (X, Y, Z).
struct Observation {
  Vec x;
  Vec y;
  Vec z;
};

// Column-blocked sample: row i of (x, y, z) is observation i.
struct Dataset {
  Mat x;  // N x d_x
  Mat y;  // N x q
  Mat z;  // N x d_z

  int size() const { return static_cast<int>(x.rows()); }
  int dim_x() const { return static_cast<int>(x.cols()); }
  int dim_y() const { return static_cast<int>(y.cols()); }
  int dim_z() const { return static_cast<int>(z.cols()); }

  Observation row(int i) const {
    return Observation{x.row(i).transpose(), y.row(i).transpose(), z.row(i).transpose()};
  }

  Dataset subset(const std::vector<int>& idx) const;
};

// Outer parameter omega in R^d.
struct OuterParameter {
  Vec omega;
  int dim() const { return static_cast<int>(omega.size()); }
};

// Almost-sure bounds (A for the outcome, B for g, D for the squared gradient
// row sums); carried as metadata only, used by diagnostics.
struct ModelBounds {
  double outcome_bound = 0.0;   // A
  double value_bound = 0.0;     // B
  double gradient_bound = 0.0;  // D
};

// Structural map omega -> (g_omega(z), d/domega g_omega(z)).
// gradient(omega, z) is d x q; row k holds the partial in omega_k.
struct StructuralModel {
  int dim_omega = 0;  // d
  int dim_out = 1;    // q
  std::function<Vec(const Vec& omega, const Vec& z)> g;
  std::function<Mat(const Vec& omega, const Vec& z)> dg;
  std::optional<ModelBounds> bounds;

  // Batch forms over the rows of Z: values are N x q, gradients are
  // N x (d*q) with column k*q + c holding component c of the omega_k partial.
  Mat values(const Vec& omega, const Mat& zs) const;
  Mat gradients(const Vec& omega, const Mat& zs) const;
};

// Nuisance tuple (h, j, m) evaluable on a batch of X rows. j(X) is
// N x (d*q), laid out like StructuralModel::gradients.
struct NuisanceSet {
  int dim_omega = 0;
  int dim_out = 1;
  std::function<Mat(const Mat& xs)> h;
  std::function<Mat(const Mat& xs)> j;
  std::function<Mat(const Mat& xs)> m;
  // Optional one-pass evaluator; implementations that share feature matrices
  // across h/j/m set this to avoid recomputing them.
  std::function<void(const Mat& xs, Mat& h_out, Mat& j_out, Mat& m_out)> joint;

  void evaluate(const Mat& xs, Mat& h_out, Mat& j_out, Mat& m_out) const {
    if (joint) {
      joint(xs, h_out, j_out, m_out);
    } else {
      h_out = h(xs);
      j_out = j(xs);
      m_out = m(xs);
    }
  }

  Vec h_at(const Vec& x) const;
  Mat j_at(const Vec& x) const;  // d x q
  Vec m_at(const Vec& x) const;
};

struct FoldSplit {
  std::vector<int> fold1;
  std::vector<int> fold2;
};

// Opt-in diagnostic: compares dg against central differences of g at random
// probe points. Returns the worst relative error observed.
double check_structural_gradient(const StructuralModel& model, const Vec& omega,
                                 const Mat& z_probes, double step = 1e-5);

}  // namespace obigrad
