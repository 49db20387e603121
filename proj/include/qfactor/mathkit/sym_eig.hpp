#pragma once

// Dense symmetric eigendecomposition by cyclic Jacobi rotations.

#include "qfactor/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace qfactor {

struct EigenDecomposition {
  Eigen::VectorXd eigenvalues;   ///< sorted non-increasing
  Eigen::MatrixXd eigenvectors;  ///< column j pairs with eigenvalues(j)
};

namespace detail {

// Flip v so that its entry of largest magnitude (first one on ties) is non-negative.
template <typename Vec>
void fix_vector_sign(Vec&& v) {
  Eigen::Index arg = 0;
  double best = -1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::abs(v(i)) > best) {
      best = std::abs(v(i));
      arg = i;
    }
  }
  if (v.size() > 0 && v(arg) < 0.0) v = -v;
}

}  // namespace detail

struct JacobiOptions {
  double relative_tol = 1e-12;  ///< stop when off-diagonal Frobenius norm < tol * ||A||_F
  int max_sweeps = 100;
};

inline EigenDecomposition sym_eig(const Eigen::Ref<const Eigen::MatrixXd>& input,
                                  const JacobiOptions& opts = {}) {
  const Eigen::Index n = input.rows();
  if (n < 1 || input.cols() != n) throw DimensionError("sym_eig requires a non-empty square matrix");
  const double norm = input.norm();
  if ((input - input.transpose()).norm() > 1e-10 * norm) {
    throw SymmetryError("sym_eig: input matrix is not symmetric");
  }

  Eigen::MatrixXd a = 0.5 * (input + input.transpose());
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);

  auto off_norm = [&a, n] {
    double s = 0.0;
    for (Eigen::Index q = 1; q < n; ++q)
      for (Eigen::Index p = 0; p < q; ++p) s += a(p, q) * a(p, q);
    return std::sqrt(2.0 * s);
  };

  const double target = opts.relative_tol * norm;
  int sweep = 0;
  for (; sweep < opts.max_sweeps; ++sweep) {
    if (off_norm() <= target) break;
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        // Skip rotations that can no longer change the diagonal in floating point.
        if (sweep > 3 && std::abs(apq) < 1e-18 * (std::abs(app) + std::abs(aqq))) {
          a(p, q) = a(q, p) = 0.0;
          continue;
        }
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        // Columns p and q (contiguous in column-major storage).
        double* cp = a.col(p).data();
        double* cq = a.col(q).data();
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = cp[k];
          const double akq = cq[k];
          cp[k] = c * akp - s * akq;
          cq[k] = s * akp + c * akq;
        }
        // Rows p and q mirror the columns by symmetry.
        for (Eigen::Index k = 0; k < n; ++k) {
          a(p, k) = cp[k];
          a(q, k) = cq[k];
        }
        a(p, p) = app - t * apq;
        a(q, q) = aqq + t * apq;
        a(p, q) = a(q, p) = 0.0;

        double* vp = v.col(p).data();
        double* vq = v.col(q).data();
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = vp[k];
          const double vkq = vq[k];
          vp[k] = c * vkp - s * vkq;
          vq[k] = s * vkp + c * vkq;
        }
      }
    }
  }
  if (sweep == opts.max_sweeps && off_norm() > target) {
    throw ConvergenceError("sym_eig: Jacobi sweeps did not converge");
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&a](Eigen::Index i, Eigen::Index j) { return a(i, i) > a(j, j); });

  EigenDecomposition out;
  out.eigenvalues.resize(n);
  out.eigenvectors.resize(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index src = order[static_cast<std::size_t>(j)];
    out.eigenvalues(j) = a(src, src);
    out.eigenvectors.col(j) = v.col(src);
    detail::fix_vector_sign(out.eigenvectors.col(j));
  }
  return out;
}

/// Symmetric positive semidefinite square root and inverse square root via sym_eig.
/// Eigenvalues below floor * max eigenvalue raise SingularityError for the inverse.
struct SymmetricRoots {
  Eigen::MatrixXd sqrt;
  Eigen::MatrixXd inv_sqrt;
};

inline SymmetricRoots symmetric_roots(const Eigen::Ref<const Eigen::MatrixXd>& a, double floor = 1e-12) {
  const EigenDecomposition eig = sym_eig(a);
  const double top = eig.eigenvalues(0);
  const double bottom = eig.eigenvalues(eig.eigenvalues.size() - 1);
  if (!(top > 0.0) || bottom <= floor * top) {
    throw SingularityError("matrix is not positive definite");
  }
  const Eigen::ArrayXd root = eig.eigenvalues.array().sqrt();
  SymmetricRoots out;
  out.sqrt = eig.eigenvectors * root.matrix().asDiagonal() * eig.eigenvectors.transpose();
  out.inv_sqrt = eig.eigenvectors * root.inverse().matrix().asDiagonal() * eig.eigenvectors.transpose();
  return out;
}

}  // namespace qfactor
