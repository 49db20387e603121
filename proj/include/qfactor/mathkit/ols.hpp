#pragma once

#include "qfactor/error.hpp"

#include <Eigen/Dense>

namespace qfactor {

/// Adjusted R^2 of the least-squares regression of y on [1, Z].
/// Z may have zero columns, in which case the result is 0.
inline double ols_r2(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::MatrixXd>& z) {
  const Eigen::Index t = y.size();
  const Eigen::Index d = z.cols();
  if (z.rows() != t) throw DimensionError("ols_r2: response and design lengths differ");
  if (t <= d + 1) throw DomainError("ols_r2 requires more observations than regressors plus one");

  const double mean = y.mean();
  const double sst = (y.array() - mean).square().sum();
  if (!(sst > 0.0)) throw DomainError("ols_r2: response has zero variance");
  if (d == 0) return 0.0;

  Eigen::MatrixXd design(t, d + 1);
  design.col(0).setOnes();
  design.rightCols(d) = z;

  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (sv(sv.size() - 1) <= 1e-10 * sv(0)) throw RankError("ols_r2: design matrix is rank deficient");

  const Eigen::VectorXd fitted = svd.matrixU() * (svd.matrixU().transpose() * y);
  const double ssr = (y - fitted).squaredNorm();
  const double r2 = 1.0 - ssr / sst;
  return 1.0 - (1.0 - r2) * static_cast<double>(t - 1) / static_cast<double>(t - d - 1);
}

}  // namespace qfactor
