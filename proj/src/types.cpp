#include "obigrad/types.hpp"

namespace obigrad {

Dataset Dataset::subset(const std::vector<int>& idx) const {
  Dataset out;
  out.x.resize(idx.size(), x.cols());
  out.y.resize(idx.size(), y.cols());
  out.z.resize(idx.size(), z.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    out.x.row(r) = x.row(idx[r]);
    out.y.row(r) = y.row(idx[r]);
    out.z.row(r) = z.row(idx[r]);
  }
  return out;
}

Mat StructuralModel::values(const Vec& omega, const Mat& zs) const {
  Mat out(zs.rows(), dim_out);
  for (Eigen::Index i = 0; i < zs.rows(); ++i) {
    out.row(i) = g(omega, zs.row(i).transpose()).transpose();
  }
  return out;
}

Mat StructuralModel::gradients(const Vec& omega, const Mat& zs) const {
  Mat out(zs.rows(), dim_omega * dim_out);
  for (Eigen::Index i = 0; i < zs.rows(); ++i) {
    const Mat grad = dg(omega, zs.row(i).transpose());  // d x q
    for (int k = 0; k < dim_omega; ++k) {
      out.block(i, k * dim_out, 1, dim_out) = grad.row(k);
    }
  }
  return out;
}

Vec NuisanceSet::h_at(const Vec& x) const { return h(x.transpose()).row(0).transpose(); }

Mat NuisanceSet::j_at(const Vec& x) const {
  const Mat flat = j(x.transpose());  // 1 x (d*q)
  Mat out(dim_omega, dim_out);
  for (int k = 0; k < dim_omega; ++k) {
    out.row(k) = flat.block(0, k * dim_out, 1, dim_out);
  }
  return out;
}

Vec NuisanceSet::m_at(const Vec& x) const { return m(x.transpose()).row(0).transpose(); }

double check_structural_gradient(const StructuralModel& model, const Vec& omega,
                                 const Mat& z_probes, double step) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < z_probes.rows(); ++i) {
    const Vec z = z_probes.row(i).transpose();
    const Mat analytic = model.dg(omega, z);
    for (int k = 0; k < model.dim_omega; ++k) {
      Vec lo = omega, hi = omega;
      lo[k] -= step;
      hi[k] += step;
      const Vec central = (model.g(hi, z) - model.g(lo, z)) / (2.0 * step);
      const double denom = std::max(1.0, analytic.row(k).norm());
      worst = std::max(worst, (central.transpose() - analytic.row(k)).norm() / denom);
    }
  }
  return worst;
}

}  // namespace obigrad
