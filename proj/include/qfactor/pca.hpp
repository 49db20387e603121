#pragma once

// Principal-components estimator of mean factors and the PCA-SQ volatility
// factor.

#include "qfactor/error.hpp"
#include "qfactor/mathkit/sym_eig.hpp"
#include "qfactor/panel.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <string>

namespace qfactor {

/// Eigen-structure of XX'/(NT), computed once and shared by PCA and the
/// eigenvalue-based selectors. Only the smaller Gram matrix is decomposed.
struct PanelSpectrum {
  Eigen::VectorXd eigenvalues;  ///< min(N,T) eigenvalues of XX'/(NT), non-increasing
  Eigen::MatrixXd vectors;      ///< eigenvectors of the decomposed Gram matrix
  bool time_space = true;       ///< true when `vectors` are eigenvectors of XX' (T x T)
};

inline PanelSpectrum compute_spectrum(const Eigen::Ref<const Eigen::MatrixXd>& x) {
  const Eigen::Index t = x.rows();
  const Eigen::Index n = x.cols();
  const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(t));
  PanelSpectrum out;
  out.time_space = t <= n;
  Eigen::MatrixXd gram(out.time_space ? t : n, out.time_space ? t : n);
  if (out.time_space) {
    gram.noalias() = x * x.transpose();
  } else {
    gram.noalias() = x.transpose() * x;
  }
  gram *= scale;
  EigenDecomposition eig = sym_eig(gram);
  out.eigenvalues = std::move(eig.eigenvalues);
  out.vectors = std::move(eig.eigenvectors);
  return out;
}

/// Top-r unit eigenvectors of XX' with the largest-entry-positive sign rule.
inline Eigen::MatrixXd time_eigenvectors(const Eigen::Ref<const Eigen::MatrixXd>& x, const PanelSpectrum& spec,
                                         Eigen::Index r) {
  if (spec.time_space) return spec.vectors.leftCols(r);
  const double nt = static_cast<double>(x.rows()) * static_cast<double>(x.cols());
  Eigen::MatrixXd u(x.rows(), r);
  for (Eigen::Index j = 0; j < r; ++j) {
    const double mu = spec.eigenvalues(j);
    if (!(mu > 1e-12 * spec.eigenvalues(0))) {
      throw RankError("PCA: panel has fewer than " + std::to_string(r) + " non-zero principal components");
    }
    u.col(j) = x * spec.vectors.col(j) / std::sqrt(nt * mu);
    detail::fix_vector_sign(u.col(j));
  }
  return u;
}

struct PcaFit {
  Eigen::MatrixXd factors;      ///< T x r, F'F/T = I
  Eigen::MatrixXd loadings;     ///< N x r, X'F/T
  Eigen::VectorXd eigenvalues;  ///< all min(N,T) eigenvalues of XX'/(NT)
  int r = 0;
};

inline PcaFit pca_estimate(const Eigen::Ref<const Eigen::MatrixXd>& x, int r, const PanelSpectrum* shared = nullptr) {
  const Eigen::Index t = x.rows();
  const Eigen::Index n = x.cols();
  if (r < 1 || r > std::min(t, n)) {
    throw DimensionError("PCA: r must lie in [1, min(N,T)], got " + std::to_string(r));
  }
  PanelSpectrum local;
  if (shared == nullptr) {
    local = compute_spectrum(x);
    shared = &local;
  }
  PcaFit out;
  out.r = r;
  out.eigenvalues = shared->eigenvalues;
  out.factors = std::sqrt(static_cast<double>(t)) * time_eigenvectors(x, *shared, r);
  out.loadings.noalias() = x.transpose() * out.factors / static_cast<double>(t);
  return out;
}

inline PcaFit pca_estimate(const PanelData& p, int r) { return pca_estimate(p.values(), r); }

/// Cross-sectional mean of squared residuals after removing r_mean PCA
/// factors, scaled to unit Euclidean length.
inline Eigen::VectorXd pca_sq_volatility(const Eigen::Ref<const Eigen::MatrixXd>& x, int r_mean = 8) {
  if (r_mean < 1) throw DimensionError("PCA-SQ: r_mean must be at least 1");
  const PcaFit fit = pca_estimate(x, r_mean);
  const Eigen::MatrixXd resid = x - fit.factors * fit.loadings.transpose();
  const Eigen::VectorXd vol = resid.array().square().rowwise().mean().matrix();
  const double norm = vol.norm();
  const double level = x.array().square().mean();
  if (!(norm > 1e-20 * level * std::sqrt(static_cast<double>(x.rows())))) {
    throw ZeroVolatilityError("PCA-SQ: residuals vanish after removing the mean factors");
  }
  return vol / norm;
}

inline Eigen::VectorXd pca_sq_volatility(const PanelData& p, int r_mean = 8) {
  return pca_sq_volatility(p.values(), r_mean);
}

}  // namespace qfactor
