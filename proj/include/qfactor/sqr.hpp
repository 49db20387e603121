#pragma once

// Smoothed quantile factor estimation (kernel-smoothed check loss) and the
// plug-in asymptotic covariances of the estimated loadings and factors.

#include "qfactor/error.hpp"
#include "qfactor/mathkit/loss.hpp"
#include "qfactor/mathkit/sym_eig.hpp"
#include "qfactor/panel.hpp"
#include "qfactor/qfa.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace qfactor {

struct SqrConfig {
  /// Smoothing bandwidth; when unset, h = h_scale * T^(-h_exponent).
  std::optional<double> h;
  double h_scale = 1.0;
  double h_exponent = 1.0 / 7.0;  ///< must lie in (1/8, 1/6)
  /// Density bandwidth for the covariances; when unset, b = b_scale * N^(-1/5).
  std::optional<double> b;
  double b_scale = 1.0;
  double newton_tol = 1e-10;
  int max_iterations = 200;  ///< outer alternations
  double rel_tol = 1e-8;     ///< relative change of the smoothed objective
  int newton_max_steps = 50;
  bool covariances = true;
  IqrConfig iqr;  ///< settings of the IQR warm start
};

struct SqrFit : FactorFit {
  double check_objective = 0.0;  ///< M at the smoothed estimate (objective holds S)
  std::vector<Eigen::MatrixXd> loading_cov;  ///< N blocks, r x r
  std::vector<Eigen::MatrixXd> factor_cov;   ///< T blocks, r x r
  double h_used = 0.0;
  double b_used = 0.0;
};

struct Covariances {
  std::vector<Eigen::MatrixXd> loading_cov;
  std::vector<Eigen::MatrixXd> factor_cov;
};

inline double resolve_h(const SqrConfig& cfg, Eigen::Index t) {
  if (cfg.h) {
    if (!(*cfg.h > 0.0)) throw DomainError("SQR: bandwidth h must be positive");
    return *cfg.h;
  }
  if (!(cfg.h_exponent > 1.0 / 8.0 && cfg.h_exponent < 1.0 / 6.0)) {
    throw DomainError("SQR: bandwidth exponent must lie in (1/8, 1/6)");
  }
  if (!(cfg.h_scale > 0.0)) throw DomainError("SQR: bandwidth scale must be positive");
  return cfg.h_scale * std::pow(static_cast<double>(t), -cfg.h_exponent);
}

inline double resolve_b(const SqrConfig& cfg, Eigen::Index n) {
  if (cfg.b) {
    if (!(*cfg.b > 0.0)) throw DomainError("SQR: bandwidth b must be positive");
    return *cfg.b;
  }
  if (!(cfg.b_scale > 0.0)) throw DomainError("SQR: bandwidth scale must be positive");
  return cfg.b_scale * std::pow(static_cast<double>(n), -0.2);
}

/// S(theta) = (1/NT) sum_i sum_t varrho(X_it - l_i' f_t).
inline double smoothed_objective(const Eigen::Ref<const Eigen::MatrixXd>& x,
                                 const Eigen::Ref<const Eigen::MatrixXd>& loadings,
                                 const Eigen::Ref<const Eigen::MatrixXd>& factors, double tau, double h) {
  detail::require_quantile(tau);
  if (!(h > 0.0)) throw DomainError("smoothing bandwidth must be positive");
  if (loadings.rows() != x.cols() || factors.rows() != x.rows() || loadings.cols() != factors.cols()) {
    throw DimensionError("smoothed_objective: loadings/factors do not conform to the panel");
  }
  const Eigen::MatrixXd resid = x - factors * loadings.transpose();
  double total = 0.0;
  for (Eigen::Index i = 0; i < resid.cols(); ++i)
    for (Eigen::Index t = 0; t < resid.rows(); ++t) total += detail::smoothed_unchecked(resid(t, i), tau, h).value;
  return total / static_cast<double>(resid.size());
}

/// Gradient of S with respect to (loadings, factors), returned as matrices of
/// the same shapes.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> smoothed_gradient(
    const Eigen::Ref<const Eigen::MatrixXd>& x, const Eigen::Ref<const Eigen::MatrixXd>& loadings,
    const Eigen::Ref<const Eigen::MatrixXd>& factors, double tau, double h) {
  const Eigen::MatrixXd resid = x - factors * loadings.transpose();
  Eigen::MatrixXd d1(resid.rows(), resid.cols());
  for (Eigen::Index i = 0; i < resid.cols(); ++i)
    for (Eigen::Index t = 0; t < resid.rows(); ++t) d1(t, i) = detail::smoothed_unchecked(resid(t, i), tau, h).first;
  const double scale = -1.0 / static_cast<double>(resid.size());
  return {scale * d1.transpose() * factors, scale * d1 * loadings};
}

namespace detail {

// Minimizes g(c) = sum_k varrho(y_k - z_k' c) from `c`. Where the Hessian is
// positive definite a Newton step with backtracking is taken; in regions of
// negative curvature (the high-order kernel is not convex near zero) or when
// backtracking fails, a golden-section search along the steepest-descent ray
// is used instead.
class SmoothedRegression {
 public:
  SmoothedRegression(double tau, double h, const SqrConfig& cfg) : tau_(tau), h_(h), cfg_(cfg) {}

  void solve(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::MatrixXd>& z,
             Eigen::Ref<Eigen::VectorXd> c) {
    const double n = static_cast<double>(z.rows());
    double value = evaluate(y, z, c, true);
    for (int step = 0; step < cfg_.newton_max_steps; ++step) {
      if (grad_.cwiseAbs().maxCoeff() <= cfg_.newton_tol * n) return;
      bool accepted = false;
      double moved = 0.0;
      if (newton_direction()) {
        const double slope = grad_.dot(dir_);
        double alpha = 1.0;
        for (int k = 0; k < 40 && slope < 0.0; ++k) {
          trial_ = c + alpha * dir_;
          const double v = evaluate(y, z, trial_, false);
          if (v <= value + 1e-4 * alpha * slope) {
            c = trial_;
            accepted = true;
            moved = alpha * dir_.cwiseAbs().maxCoeff();
            break;
          }
          alpha *= 0.5;
        }
      }
      if (!accepted) {
        const double before = value;
        if (!(golden_section(y, z, c, value) < before)) return;  // no descent left at this resolution
      }
      value = evaluate(y, z, c, true);
      if (accepted && moved <= 1e-14 * (1.0 + c.cwiseAbs().maxCoeff())) return;
    }
    if (grad_.cwiseAbs().maxCoeff() > std::sqrt(cfg_.newton_tol) * n) {
      throw ConvergenceError("SQR: Newton iterations did not converge", Eigen::VectorXd(c));
    }
  }

 private:
  double evaluate(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::MatrixXd>& z,
                  const Eigen::Ref<const Eigen::VectorXd>& c, bool derivatives) {
    const Eigen::Index d = z.cols();
    resid_.noalias() = y - z * c;
    double value = 0.0;
    if (derivatives) {
      grad_.setZero(d);
      hess_.setZero(d, d);
    }
    for (Eigen::Index k = 0; k < z.rows(); ++k) {
      const SmoothedLoss s = smoothed_unchecked(resid_(k), tau_, h_);
      value += s.value;
      if (derivatives) {
        grad_.noalias() -= s.first * z.row(k).transpose();
        if (s.second != 0.0) hess_.noalias() += s.second * z.row(k).transpose() * z.row(k);
      }
    }
    return value;
  }

  // Newton direction into dir_; false when the Hessian is not safely positive definite.
  bool newton_direction() {
    const double scale = hess_.cwiseAbs().maxCoeff();
    if (!(scale > 0.0) || hess_.diagonal().minCoeff() <= 1e-12 * scale) return false;
    llt_.compute(hess_);
    if (llt_.info() != Eigen::Success) return false;
    dir_ = llt_.solve(-grad_);
    return dir_.allFinite();
  }

  double golden_section(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::MatrixXd>& z,
                        Eigen::Ref<Eigen::VectorXd> c, double value) {
    const double gnorm = grad_.norm();
    if (!(gnorm > 0.0)) return value;
    const Eigen::VectorXd dir = -grad_ / gnorm;
    auto at = [&](double s) {
      trial_ = c + s * dir;
      return evaluate(y, z, trial_, false);
    };
    double hi = h_;
    for (int k = 0; k < 60 && at(hi) < value; ++k) hi *= 2.0;
    const double ratio = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = 0.0;
    double b = hi;
    double x1 = b - ratio * (b - a);
    double x2 = a + ratio * (b - a);
    double f1 = at(x1);
    double f2 = at(x2);
    for (int k = 0; k < 100 && b - a > 1e-14 * (1.0 + hi); ++k) {
      if (f1 < f2) {
        b = x2;
        x2 = x1;
        f2 = f1;
        x1 = b - ratio * (b - a);
        f1 = at(x1);
      } else {
        a = x1;
        x1 = x2;
        f1 = f2;
        x2 = a + ratio * (b - a);
        f2 = at(x2);
      }
    }
    const double s = f1 < f2 ? x1 : x2;
    const double best = std::min(f1, f2);
    if (best < value) {
      c += s * dir;
      return best;
    }
    return value;
  }

  double tau_;
  double h_;
  const SqrConfig& cfg_;
  Eigen::VectorXd resid_;
  Eigen::VectorXd grad_;
  Eigen::MatrixXd hess_;
  Eigen::VectorXd trial_;
  Eigen::VectorXd dir_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

inline Eigen::MatrixXd inverse_power(const Eigen::MatrixXd& a, int power, char kind, Eigen::Index index) {
  const EigenDecomposition eig = sym_eig(a);
  if (eig.eigenvalues.minCoeff() <= 1e-10) {
    throw SingularDensityError(std::string("kernel density matrix is singular at ") +
                                   (kind == 'i' ? "unit " : "period ") + std::to_string(index),
                               kind, index);
  }
  const Eigen::VectorXd d = eig.eigenvalues.array().pow(-static_cast<double>(power)).matrix();
  return eig.eigenvectors * d.asDiagonal() * eig.eigenvectors.transpose();
}

inline double interquartile_range(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto q = [&v](double p) {
    const std::size_t k = static_cast<std::size_t>(p * static_cast<double>(v.size() - 1));
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
    return v[k];
  };
  const double q3 = q(0.75);
  const double q1 = q(0.25);
  return q3 - q1;
}

}  // namespace detail

/// Plug-in covariances: Phi_i = (1/Tb) sum_t l(u_it/b) f_t f_t',
/// Psi_t = (1/Nb) sum_i l(u_it/b) l_i l_i', V_l = tau(1-tau) Phi_i^-2 and
/// V_f = tau(1-tau) Psi_t^-1 Sigma_L Psi_t^-1 with l the Epanechnikov kernel.
inline Covariances estimate_covariances(const Eigen::Ref<const Eigen::MatrixXd>& x,
                                        const Eigen::Ref<const Eigen::MatrixXd>& loadings,
                                        const Eigen::Ref<const Eigen::MatrixXd>& factors, double tau, double b) {
  detail::require_quantile(tau);
  if (!(b > 0.0)) throw DomainError("estimate_covariances: bandwidth b must be positive");
  if (loadings.rows() != x.cols() || factors.rows() != x.rows() || loadings.cols() != factors.cols()) {
    throw DimensionError("estimate_covariances: loadings/factors do not conform to the panel");
  }
  const Eigen::Index t_len = x.rows();
  const Eigen::Index n = x.cols();
  const Eigen::Index r = loadings.cols();
  const Eigen::MatrixXd resid = x - factors * loadings.transpose();
  Eigen::MatrixXd weight(t_len, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index t = 0; t < t_len; ++t) weight(t, i) = kernel_epanechnikov(resid(t, i) / b);
  const double scale = tau * (1.0 - tau);
  const Eigen::MatrixXd sigma_l = loadings.transpose() * loadings / static_cast<double>(n);

  Covariances out;
  out.loading_cov.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::MatrixXd phi =
        factors.transpose() * weight.col(i).asDiagonal() * factors / (static_cast<double>(t_len) * b);
    Eigen::MatrixXd v = scale * detail::inverse_power(0.5 * (phi + phi.transpose()), 2, 'i', i);
    out.loading_cov.push_back(0.5 * (v + v.transpose()));
  }
  out.factor_cov.reserve(static_cast<std::size_t>(t_len));
  for (Eigen::Index t = 0; t < t_len; ++t) {
    const Eigen::MatrixXd psi =
        loadings.transpose() * weight.row(t).transpose().asDiagonal() * loadings / (static_cast<double>(n) * b);
    const Eigen::MatrixXd inv = detail::inverse_power(0.5 * (psi + psi.transpose()), 1, 't', t);
    Eigen::MatrixXd v = scale * inv * sigma_l * inv;
    out.factor_cov.push_back(0.5 * (v + v.transpose()));
  }
  (void)r;
  return out;
}

/// Smoothed-QR estimator, warm-started at the IQR fit.
inline SqrFit sqr_estimate(const PanelData& p, double tau, int r, const SqrConfig& cfg = {}) {
  const Eigen::MatrixXd& x = p.values();
  const double h = resolve_h(cfg, p.T());
  const double b = resolve_b(cfg, p.N());
  if (cfg.max_iterations < 1 || !(cfg.newton_tol > 0.0) || !(cfg.rel_tol > 0.0)) {
    throw DomainError("SQR: max_iterations must be >= 1 and tolerances positive");
  }
  const FactorFit start = iqr_estimate(p, tau, r, cfg.iqr);

  SqrFit fit;
  static_cast<FactorFit&>(fit) = start;
  fit.h_used = h;
  fit.b_used = b;

  const Eigen::MatrixXd resid0 = x - start.factors * start.loadings.transpose();
  const double resid_scale = resid0.cwiseAbs().maxCoeff();
  const bool exact = resid_scale <= 1e-12 * std::max(1.0, x.cwiseAbs().maxCoeff());
  if (!exact) {
    const double iqr = detail::interquartile_range(std::vector<double>(resid0.data(), resid0.data() + resid0.size()));
    if (iqr > 0.0 && h >= 0.5 * iqr) {
      throw DomainError("SQR: bandwidth h is not below half the interquartile range of the residuals");
    }
    const Eigen::MatrixXd xt = x.transpose();
    Eigen::MatrixXd lam = start.loadings;
    Eigen::MatrixXd fac = start.factors;
    detail::SmoothedRegression solver(tau, h, cfg);
    std::vector<double> trace{smoothed_objective(x, lam, fac, tau, h)};
    fit.converged = false;
    int iter = 0;
    for (iter = 1; iter <= cfg.max_iterations; ++iter) {
      for (Eigen::Index i = 0; i < x.cols(); ++i) {
        Eigen::VectorXd c = lam.row(i).transpose();
        solver.solve(x.col(i), fac, c);
        lam.row(i) = c.transpose();
      }
      for (Eigen::Index t = 0; t < x.rows(); ++t) {
        Eigen::VectorXd c = fac.row(t).transpose();
        solver.solve(xt.col(t), lam, c);
        fac.row(t) = c.transpose();
      }
      trace.push_back(smoothed_objective(x, lam, fac, tau, h));
      const double prev = trace[trace.size() - 2];
      if (std::abs(trace.back() - prev) / std::max(std::abs(prev), 1e-12) < cfg.rel_tol) {
        fit.converged = true;
        break;
      }
    }
    NormalizedFit nf = detail::normalize_or_project(lam, fac, &fit.warnings);
    fit.loadings = std::move(nf.loadings);
    fit.factors = std::move(nf.factors);
    fit.objective_trace = std::move(trace);
    fit.iterations = std::min(iter, cfg.max_iterations);
    if (!fit.converged) fit.warnings.push_back("SQR reached max_iterations before the objective stabilized");
  }
  fit.objective = smoothed_objective(x, fit.loadings, fit.factors, tau, h);
  fit.check_objective = objective(x, fit.loadings, fit.factors, tau);
  if (cfg.covariances) {
    Covariances cov = estimate_covariances(x, fit.loadings, fit.factors, tau, b);
    fit.loading_cov = std::move(cov.loading_cov);
    fit.factor_cov = std::move(cov.factor_cov);
  }
  return fit;
}

namespace detail {

inline Eigen::VectorXd whiten(const Eigen::MatrixXd& cov, const Eigen::VectorXd& dev, double root_n) {
  const EigenDecomposition eig = sym_eig(cov);
  if (eig.eigenvalues.minCoeff() <= 0.0) throw SingularityError("standardized statistic: covariance is singular");
  const Eigen::VectorXd d = eig.eigenvalues.array().rsqrt().matrix();
  return eig.eigenvectors * d.asDiagonal() * eig.eigenvectors.transpose() * dev * root_n;
}

}  // namespace detail

/// V_f^(-1/2) sqrt(N) (f~_t - f0_t). `true_factors` must be sign-aligned with the fit.
inline Eigen::VectorXd standardized_factor_stat(const SqrFit& fit, const Eigen::Ref<const Eigen::MatrixXd>& true_factors,
                                                Eigen::Index t) {
  if (true_factors.rows() != fit.factors.rows() || true_factors.cols() != fit.factors.cols()) {
    throw DimensionError("standardized_factor_stat: truth does not match the fit");
  }
  if (t < 0 || t >= fit.factors.rows() || static_cast<std::size_t>(t) >= fit.factor_cov.size()) {
    throw DimensionError("standardized_factor_stat: period index out of range or covariances missing");
  }
  const Eigen::VectorXd dev = (fit.factors.row(t) - true_factors.row(t)).transpose();
  return detail::whiten(fit.factor_cov[static_cast<std::size_t>(t)], dev,
                        std::sqrt(static_cast<double>(fit.loadings.rows())));
}

/// V_l^(-1/2) sqrt(T) (l~_i - l0_i).
inline Eigen::VectorXd standardized_loading_stat(const SqrFit& fit,
                                                 const Eigen::Ref<const Eigen::MatrixXd>& true_loadings, Eigen::Index i) {
  if (true_loadings.rows() != fit.loadings.rows() || true_loadings.cols() != fit.loadings.cols()) {
    throw DimensionError("standardized_loading_stat: truth does not match the fit");
  }
  if (i < 0 || i >= fit.loadings.rows() || static_cast<std::size_t>(i) >= fit.loading_cov.size()) {
    throw DimensionError("standardized_loading_stat: unit index out of range or covariances missing");
  }
  const Eigen::VectorXd dev = (fit.loadings.row(i) - true_loadings.row(i)).transpose();
  return detail::whiten(fit.loading_cov[static_cast<std::size_t>(i)], dev,
                        std::sqrt(static_cast<double>(fit.factors.rows())));
}

}  // namespace qfactor
