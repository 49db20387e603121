#pragma once

// Estimators of the number of factors: rank minimization and the penalized
// check-loss criterion at a quantile, plus the mean-factor baselines PC_p1,
// IC_p1 and the eigenvalue ratio.

#include "qfactor/error.hpp"
#include "qfactor/panel.hpp"
#include "qfactor/pca.hpp"
#include "qfactor/qfa.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace qfactor {

enum class SelectionMethod { RankMin, IcQfa, PcP1, IcP1, EigenRatio };

inline std::string to_string(SelectionMethod m) {
  switch (m) {
    case SelectionMethod::RankMin:
      return "rank_min";
    case SelectionMethod::IcQfa:
      return "ic_qfa";
    case SelectionMethod::PcP1:
      return "pc_p1";
    case SelectionMethod::IcP1:
      return "ic_p1";
    case SelectionMethod::EigenRatio:
      return "eigen_ratio";
  }
  return "unknown";
}

struct SelectionResult {
  SelectionMethod method = SelectionMethod::RankMin;
  int r_hat = 0;
  int k_max = 0;
  /// rank_min: diagonal of L'L/N; IC methods: criterion per l = 1..k;
  /// eigen_ratio: ratio per j = 1..k (NaN where unavailable).
  std::vector<double> diagnostics;
  std::optional<double> threshold;
  std::optional<double> tau;
};

/// (1 / L_NT^2)^(1/3) with L_NT^2 = min(N, T).
inline double rank_threshold_factor(Eigen::Index n, Eigen::Index t) {
  return std::cbrt(1.0 / static_cast<double>(std::min(n, t)));
}

/// Rank-minimization count from an over-fitted, normalized k-factor fit.
inline SelectionResult rank_min_from_fit(const FactorFit& fit) {
  const double n = static_cast<double>(fit.loadings.rows());
  const Eigen::VectorXd sigma = fit.loadings.colwise().squaredNorm().transpose() / n;
  SelectionResult out;
  out.method = SelectionMethod::RankMin;
  out.k_max = static_cast<int>(sigma.size());
  out.tau = fit.tau;
  out.threshold = sigma(0) * rank_threshold_factor(fit.loadings.rows(), fit.factors.rows());
  out.diagnostics.assign(sigma.data(), sigma.data() + sigma.size());
  for (double s : out.diagnostics)
    if (s > *out.threshold) ++out.r_hat;
  return out;
}

inline SelectionResult select_rank_min(const PanelData& p, double tau, int k = 8, const IqrConfig& cfg = {}) {
  if (k < 1) throw DomainError("select_rank_min: k must be at least 1");
  return rank_min_from_fit(iqr_estimate(p, tau, k, cfg));
}

struct IcPenalty {
  enum class Kind {
    RankScale,  ///< sigma_1^k * (1/L_NT^2)^(1/3), sigma_1^k from the k-factor fit
    AndoBai,    ///< log(NT/(N+T)) * (N+T)/(NT)
    Fixed,      ///< `value`
  };
  Kind kind = Kind::RankScale;
  double value = 0.0;
};

inline double ando_bai_penalty(Eigen::Index n, Eigen::Index t) {
  const double nn = static_cast<double>(n);
  const double tt = static_cast<double>(t);
  return std::log(nn * tt / (nn + tt)) * (nn + tt) / (nn * tt);
}

/// argmin_{1<=l<=k} M(theta^l) + l * P, fitting the model once per l.
inline SelectionResult select_ic_qfa(const PanelData& p, double tau, int k = 8, const IcPenalty& penalty = {},
                                     const IqrConfig& cfg = {}) {
  if (k < 1) throw DomainError("select_ic_qfa: k must be at least 1");
  if (penalty.kind == IcPenalty::Kind::Fixed && !(penalty.value > 0.0)) {
    throw DomainError("select_ic_qfa: a fixed penalty must be positive");
  }
  std::vector<double> objectives;
  double rank_scale = 0.0;
  for (int l = 1; l <= k; ++l) {
    const FactorFit fit = iqr_estimate(p, tau, l, cfg);
    objectives.push_back(fit.objective);
    if (l == k) rank_scale = *rank_min_from_fit(fit).threshold;
  }
  double pen = penalty.value;
  if (penalty.kind == IcPenalty::Kind::RankScale) pen = rank_scale;
  if (penalty.kind == IcPenalty::Kind::AndoBai) pen = ando_bai_penalty(p.N(), p.T());

  SelectionResult out;
  out.method = SelectionMethod::IcQfa;
  out.k_max = k;
  out.tau = tau;
  out.threshold = pen;
  double best = std::numeric_limits<double>::infinity();
  for (int l = 1; l <= k; ++l) {
    const double crit = objectives[static_cast<std::size_t>(l - 1)] + l * pen;
    out.diagnostics.push_back(crit);
    if (crit < best) {
      best = crit;
      out.r_hat = l;
    }
  }
  return out;
}

namespace detail {

// V(l) = mean squared residual after l principal components, l = 0..k.
inline std::vector<double> pca_residual_variances(const PanelSpectrum& spec, int k) {
  const Eigen::Index m = spec.eigenvalues.size();
  if (k < 1 || k > m) throw DimensionError("selection: k must lie in [1, min(N,T)]");
  const Eigen::VectorXd mu = spec.eigenvalues.cwiseMax(0.0);
  std::vector<double> v(static_cast<std::size_t>(k + 1));
  for (int l = 0; l <= k; ++l) v[static_cast<std::size_t>(l)] = mu.tail(m - l).sum();
  const double floor = 1e-12 * v[0];
  for (double& x : v)
    if (x < floor) x = 0.0;
  return v;
}

inline SelectionResult pick_min(SelectionMethod method, int k, std::vector<double> crit) {
  SelectionResult out;
  out.method = method;
  out.k_max = k;
  double best = std::numeric_limits<double>::infinity();
  for (int l = 1; l <= k; ++l) {
    const double c = crit[static_cast<std::size_t>(l - 1)];
    if (c < best || (out.r_hat == 0 && c == best)) {
      best = c;
      out.r_hat = l;
    }
  }
  out.diagnostics = std::move(crit);
  return out;
}

inline double bn_penalty(Eigen::Index n, Eigen::Index t) { return ando_bai_penalty(n, t); }

}  // namespace detail

/// PC_p1: V(l) + l * V(k) * ((N+T)/NT) * log(NT/(N+T)).
inline SelectionResult select_pc_p1(const PanelSpectrum& spec, Eigen::Index n, Eigen::Index t, int k = 8) {
  const auto v = detail::pca_residual_variances(spec, k);
  const double g = detail::bn_penalty(n, t);
  std::vector<double> crit;
  for (int l = 1; l <= k; ++l) crit.push_back(v[static_cast<std::size_t>(l)] + l * v[static_cast<std::size_t>(k)] * g);
  SelectionResult out = detail::pick_min(SelectionMethod::PcP1, k, std::move(crit));
  out.threshold = v[static_cast<std::size_t>(k)] * g;
  return out;
}

/// IC_p1: log V(l) + l * ((N+T)/NT) * log(NT/(N+T)).
inline SelectionResult select_ic_p1(const PanelSpectrum& spec, Eigen::Index n, Eigen::Index t, int k = 8) {
  const auto v = detail::pca_residual_variances(spec, k);
  const double g = detail::bn_penalty(n, t);
  std::vector<double> crit;
  for (int l = 1; l <= k; ++l) {
    const double vl = v[static_cast<std::size_t>(l)];
    crit.push_back((vl > 0.0 ? std::log(vl) : -std::numeric_limits<double>::infinity()) + l * g);
  }
  SelectionResult out = detail::pick_min(SelectionMethod::IcP1, k, std::move(crit));
  out.threshold = g;
  return out;
}

/// Eigenvalue ratio: argmax_{1<=j<=k} mu_j / mu_{j+1}. Ratios whose denominator
/// falls below 1e-12 * mu_1 are skipped; ties go to the smallest j. When no
/// ratio is available the panel has a single non-negligible component.
inline SelectionResult select_eigen_ratio(const Eigen::Ref<const Eigen::VectorXd>& eigenvalues, int k = 8) {
  if (k < 1 || k + 1 > eigenvalues.size()) {
    throw DimensionError("select_eigen_ratio: k must lie in [1, min(N,T)-1]");
  }
  SelectionResult out;
  out.method = SelectionMethod::EigenRatio;
  out.k_max = k;
  double best = -1.0;
  for (int j = 1; j <= k; ++j) {
    const double num = eigenvalues(j - 1);
    const double den = eigenvalues(j);
    // Below ~100 ulps of rho_1 the eigenvalue is rounding noise of a true zero.
    if (!(den >= 1e-14 * eigenvalues(0)) || den <= 0.0) {
      out.diagnostics.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double ratio = num / den;
    out.diagnostics.push_back(ratio);
    if (ratio > best) {
      best = ratio;
      out.r_hat = j;
    }
  }
  if (out.r_hat == 0) out.r_hat = 1;
  return out;
}

inline SelectionResult select_pc_p1(const PanelData& p, int k = 8) {
  return select_pc_p1(compute_spectrum(p.values()), p.N(), p.T(), k);
}

inline SelectionResult select_ic_p1(const PanelData& p, int k = 8) {
  return select_ic_p1(compute_spectrum(p.values()), p.N(), p.T(), k);
}

inline SelectionResult select_eigen_ratio(const PanelData& p, int k = 8) {
  return select_eigen_ratio(compute_spectrum(p.values()).eigenvalues, k);
}

}  // namespace qfactor
