#pragma once

// Quantile factor analysis: the iterative quantile regression (IQR) estimator
// of loadings and factors, the identifying normalization, the check-loss
// objective, the semimetric between fits and the two-stage PCA + QR
// estimator.

#include "qfactor/detail/parallel.hpp"
#include "qfactor/error.hpp"
#include "qfactor/mathkit/loss.hpp"
#include "qfactor/mathkit/qr_solve.hpp"
#include "qfactor/mathkit/sym_eig.hpp"
#include "qfactor/panel.hpp"
#include "qfactor/pca.hpp"
#include "qfactor/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace qfactor {

struct FactorFit {
  Eigen::MatrixXd loadings;  ///< N x r
  Eigen::MatrixXd factors;   ///< T x r
  double tau = 0.5;
  int r = 0;
  double objective = 0.0;
  std::vector<double> objective_trace;  ///< objective after each full iteration
  int iterations = 0;
  bool converged = false;
  int restarts_used = 0;
  std::vector<std::string> warnings;
};

/// Loss minimized by the alternating scheme. Squared turns IQR into
/// orthogonal iteration and exists for the PCA-equivalence check.
enum class IqrLoss { Check, Squared };

struct IqrConfig {
  int max_iterations = 100;
  double rel_tol = 1e-6;
  int restarts = 3;
  std::uint64_t seed = 20240607;
  double inner_tol = 1e-10;
  /// Re-impose the identifying normalization after every iteration instead of
  /// only once at the end. The common component is unaffected either way.
  bool normalize_each_iteration = false;
  /// Workers for the per-unit and per-period regressions inside a half-step.
  int threads = 1;
  IqrLoss loss = IqrLoss::Check;
};

struct NormalizedFit {
  Eigen::MatrixXd loadings;
  Eigen::MatrixXd factors;
  Eigen::MatrixXd rotation;  ///< H with factors_out = factors_in * H
};

/// Rotate (loadings, factors) so that F'F/T = I and L'L/N is diagonal and
/// non-increasing, then flip column signs so each loading column's largest
/// entry in magnitude is positive. The common component L F' is preserved.
inline NormalizedFit normalize_fit(const Eigen::Ref<const Eigen::MatrixXd>& loadings,
                                   const Eigen::Ref<const Eigen::MatrixXd>& factors) {
  if (loadings.cols() != factors.cols() || loadings.cols() < 1) {
    throw DimensionError("normalize_fit: loadings and factors must share r >= 1 columns");
  }
  const double t = static_cast<double>(factors.rows());
  const double n = static_cast<double>(loadings.rows());
  const Eigen::MatrixXd sigma_f = factors.transpose() * factors / t;
  const Eigen::MatrixXd sigma_l = loadings.transpose() * loadings / n;
  SymmetricRoots roots;
  try {
    roots = symmetric_roots(sigma_f);
  } catch (const SingularityError&) {
    throw SingularityError("normalize_fit: F'F/T is singular");
  }
  Eigen::MatrixXd m = roots.sqrt * sigma_l * roots.sqrt;
  m = 0.5 * (m + m.transpose());
  const EigenDecomposition eig = sym_eig(m);

  NormalizedFit out;
  out.rotation = roots.inv_sqrt * eig.eigenvectors;
  out.factors = factors * out.rotation;
  out.loadings = loadings * (roots.sqrt * eig.eigenvectors);
  for (Eigen::Index j = 0; j < out.loadings.cols(); ++j) {
    Eigen::Index arg = 0;
    out.loadings.col(j).cwiseAbs().maxCoeff(&arg);
    if (out.loadings(arg, j) < 0.0) {
      out.loadings.col(j) *= -1.0;
      out.factors.col(j) *= -1.0;
      out.rotation.col(j) *= -1.0;
    }
  }
  return out;
}

namespace detail {

// Over-fitted estimates can leave F'F/T singular (a redundant factor column
// collapses to zero). The common component is still well defined, so
// renormalize through its SVD: F = sqrt(T) U_r, L = V_r S_r / sqrt(T).
inline NormalizedFit normalize_or_project(const Eigen::MatrixXd& loadings, const Eigen::MatrixXd& factors,
                                          std::vector<std::string>* warnings) {
  try {
    return normalize_fit(loadings, factors);
  } catch (const SingularityError&) {
    if (warnings) warnings->push_back("F'F/T singular; normalized through the SVD of the common component");
  }
  const Eigen::Index r = factors.cols();
  const double t = static_cast<double>(factors.rows());
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(factors * loadings.transpose(),
                                              Eigen::ComputeThinU | Eigen::ComputeThinV);
  NormalizedFit out;
  out.factors = std::sqrt(t) * svd.matrixU().leftCols(r);
  out.loadings = svd.matrixV().leftCols(r) * svd.singularValues().head(r).asDiagonal() / std::sqrt(t);
  // Least-squares map from the input factors; exact only when they had full rank.
  out.rotation = factors.completeOrthogonalDecomposition().solve(out.factors);
  for (Eigen::Index j = 0; j < r; ++j) {
    Eigen::Index arg = 0;
    out.loadings.col(j).cwiseAbs().maxCoeff(&arg);
    if (out.loadings(arg, j) < 0.0) {
      out.loadings.col(j) *= -1.0;
      out.factors.col(j) *= -1.0;
      out.rotation.col(j) *= -1.0;
    }
  }
  return out;
}

}  // namespace detail

/// M(theta) = (1/NT) sum_i sum_t rho_tau(X_it - l_i' f_t).
inline double objective(const Eigen::Ref<const Eigen::MatrixXd>& x, const Eigen::Ref<const Eigen::MatrixXd>& loadings,
                        const Eigen::Ref<const Eigen::MatrixXd>& factors, double tau) {
  detail::require_quantile(tau);
  if (loadings.rows() != x.cols() || factors.rows() != x.rows() || loadings.cols() != factors.cols()) {
    throw DimensionError("objective: loadings/factors do not conform to the panel");
  }
  const Eigen::MatrixXd resid = x - factors * loadings.transpose();
  double total = 0.0;
  for (Eigen::Index i = 0; i < resid.cols(); ++i)
    for (Eigen::Index t = 0; t < resid.rows(); ++t) total += detail::rho(resid(t, i), tau);
  return total / static_cast<double>(resid.size());
}

inline double objective(const PanelData& p, const Eigen::Ref<const Eigen::MatrixXd>& loadings,
                        const Eigen::Ref<const Eigen::MatrixXd>& factors, double tau) {
  return objective(p.values(), loadings, factors, tau);
}

/// ||L_a F_a' - L_b F_b'||_F / sqrt(NT).
inline double semimetric_d(const FactorFit& a, const FactorFit& b) {
  if (a.loadings.rows() != b.loadings.rows() || a.factors.rows() != b.factors.rows() ||
      a.loadings.cols() != a.factors.cols() || b.loadings.cols() != b.factors.cols()) {
    throw DimensionError("semimetric_d: fits have different panel dimensions");
  }
  const Eigen::MatrixXd diff = a.factors * a.loadings.transpose() - b.factors * b.loadings.transpose();
  return diff.norm() / std::sqrt(static_cast<double>(diff.size()));
}

namespace detail {

// Quantile regression that tolerates a rank-deficient design. Coefficients
// along null directions of z do not change the fit, so they are kept at
// `previous` and only an independent column subset is re-estimated.
inline Eigen::VectorXd robust_qr(QrSolver& solver, const Eigen::Ref<const Eigen::VectorXd>& y,
                                 const Eigen::Ref<const Eigen::MatrixXd>& z, double tau,
                                 const Eigen::VectorXd& previous, std::vector<Eigen::Index>& basis,
                                 const QrSolveOptions& opts) {
  try {
    QrSolveResult res = solver.solve(y, z, tau, basis.empty() ? nullptr : &basis, opts);
    basis = std::move(res.basis);
    return std::move(res.coefficients);
  } catch (const RankError&) {
    basis.clear();
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(z);
    qr.setThreshold(opts.rank_tol);
    const Eigen::Index rank = qr.rank();
    Eigen::VectorXd coef = previous;
    if (rank == 0) return coef;
    Eigen::MatrixXd sub(z.rows(), rank);
    for (Eigen::Index k = 0; k < rank; ++k) sub.col(k) = z.col(qr.colsPermutation().indices()(k));
    const Eigen::VectorXd shifted = y - z * previous;
    const QrSolveResult res = solver.solve(shifted, sub, tau, nullptr, opts);
    for (Eigen::Index k = 0; k < rank; ++k) coef(qr.colsPermutation().indices()(k)) += res.coefficients(k);
    return coef;
  }
}

// Least-squares coefficients of each column of `y` on z, one row per column.
inline Eigen::MatrixXd ls_coefficients(const Eigen::Ref<const Eigen::MatrixXd>& y,
                                       const Eigen::Ref<const Eigen::MatrixXd>& z) {
  const Eigen::MatrixXd gram = z.transpose() * z;
  const Eigen::MatrixXd cross = z.transpose() * y;
  return gram.ldlt().solve(cross).transpose();
}

inline double loss_value(const Eigen::Ref<const Eigen::MatrixXd>& x, const Eigen::MatrixXd& loadings,
                         const Eigen::MatrixXd& factors, double tau, IqrLoss loss) {
  if (loss == IqrLoss::Check) return objective(x, loadings, factors, tau);
  return (x - factors * loadings.transpose()).squaredNorm() / static_cast<double>(x.size());
}

inline void guard_divergence(const Eigen::MatrixXd& a, const char* what) {
  if (!a.allFinite() || a.cwiseAbs().maxCoeff() > 1e6) {
    throw ConvergenceError(std::string("IQR diverged: ") + what + " exceeded 1e6 in magnitude");
  }
}

struct IqrRun {
  Eigen::MatrixXd loadings;
  Eigen::MatrixXd factors;
  std::vector<double> trace;
  int iterations = 0;
  bool converged = false;
};

inline IqrRun iqr_single_start(const Eigen::MatrixXd& x, const Eigen::MatrixXd& xt, double tau, int r,
                               const IqrConfig& cfg, RngStream& rng) {
  const Eigen::Index t_len = x.rows();
  const Eigen::Index n_len = x.cols();
  Eigen::MatrixXd start(t_len, r);
  for (Eigen::Index j = 0; j < r; ++j)
    for (Eigen::Index t = 0; t < t_len; ++t) start(t, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(start);
  IqrRun run;
  run.factors = std::sqrt(static_cast<double>(t_len)) *
                (qr.householderQ() * Eigen::MatrixXd::Identity(t_len, r));
  run.loadings = Eigen::MatrixXd::Zero(n_len, r);

  const int workers = std::max(1, cfg.threads);
  std::vector<QrSolver> solvers(static_cast<std::size_t>(workers));
  std::vector<std::vector<Eigen::Index>> unit_basis(static_cast<std::size_t>(n_len));
  std::vector<std::vector<Eigen::Index>> time_basis(static_cast<std::size_t>(t_len));
  QrSolveOptions opts;
  opts.optimality_tol = cfg.inner_tol;

  for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
    if (cfg.loss == IqrLoss::Squared) {
      run.loadings = ls_coefficients(x, run.factors);
      run.factors = ls_coefficients(xt, run.loadings);
    } else {
      const Eigen::MatrixXd& f = run.factors;
      Eigen::MatrixXd& l = run.loadings;
      parallel_for(static_cast<long>(n_len), workers, [&](long i, int w) {
        const Eigen::VectorXd prev = l.row(i).transpose();
        l.row(i) = robust_qr(solvers[static_cast<std::size_t>(w)], x.col(i), f, tau, prev,
                             unit_basis[static_cast<std::size_t>(i)], opts)
                       .transpose();
      });
      guard_divergence(run.loadings, "loadings");
      const Eigen::MatrixXd& l2 = run.loadings;
      Eigen::MatrixXd& f2 = run.factors;
      parallel_for(static_cast<long>(t_len), workers, [&](long t, int w) {
        const Eigen::VectorXd prev = f2.row(t).transpose();
        f2.row(t) = robust_qr(solvers[static_cast<std::size_t>(w)], xt.col(t), l2, tau, prev,
                              time_basis[static_cast<std::size_t>(t)], opts)
                        .transpose();
      });
    }
    guard_divergence(run.factors, "factors");
    if (cfg.normalize_each_iteration) {
      NormalizedFit nf = normalize_or_project(run.loadings, run.factors, nullptr);
      run.loadings = std::move(nf.loadings);
      run.factors = std::move(nf.factors);
    }
    run.trace.push_back(loss_value(x, run.loadings, run.factors, tau, cfg.loss));
    run.iterations = iter;
    const std::size_t len = run.trace.size();
    if (len >= 2) {
      const double prev = run.trace[len - 2];
      const double change = std::abs(run.trace[len - 1] - prev) / std::max(prev, 1e-12);
      if (change < cfg.rel_tol) {
        run.converged = true;
        break;
      }
    } else if (run.trace.back() == 0.0) {
      run.converged = true;
      break;
    }
  }
  return run;
}

inline void check_iqr_inputs(const Eigen::MatrixXd& x, double tau, int r, const IqrConfig& cfg,
                             const std::vector<std::string>& unit_ids) {
  require_quantile(tau);
  const Eigen::Index t_len = x.rows();
  const Eigen::Index n_len = x.cols();
  if (r < 1 || 2 * static_cast<Eigen::Index>(r) > std::min(t_len, n_len)) {
    throw DomainError("IQR: r must satisfy 1 <= r <= min(N,T)/2, got r=" + std::to_string(r));
  }
  if (static_cast<double>(t_len) * std::min(tau, 1.0 - tau) < static_cast<double>(r + 1)) {
    throw DomainError("IQR: T*min(tau,1-tau) must be at least r+1");
  }
  if (cfg.max_iterations < 1 || cfg.restarts < 1 || !(cfg.rel_tol > 0.0) || !(cfg.inner_tol > 0.0)) {
    throw DomainError("IQR: max_iterations and restarts must be >= 1 and tolerances positive");
  }
  std::vector<double> column(static_cast<std::size_t>(t_len));
  for (Eigen::Index i = 0; i < n_len; ++i) {
    for (Eigen::Index t = 0; t < t_len; ++t) column[static_cast<std::size_t>(t)] = x(t, i);
    std::sort(column.begin(), column.end());
    const auto distinct = std::unique(column.begin(), column.end()) - column.begin();
    if (distinct < r + 1) {
      const std::string name = i < static_cast<Eigen::Index>(unit_ids.size()) ? unit_ids[static_cast<std::size_t>(i)]
                                                                              : std::to_string(i + 1);
      throw DomainError("IQR: unit '" + name + "' has fewer than r+1 distinct values");
    }
  }
}

}  // namespace detail

/// IQR estimator: alternating exact quantile regressions from `cfg.restarts`
/// random starts; the fit with the smallest objective is normalized and returned.
inline FactorFit iqr_estimate(const PanelData& p, double tau, int r, const IqrConfig& cfg = {}) {
  const Eigen::MatrixXd& x = p.values();
  detail::check_iqr_inputs(x, tau, r, cfg, p.unit_ids());
  const Eigen::MatrixXd xt = x.transpose();

  detail::IqrRun best;
  double best_obj = std::numeric_limits<double>::infinity();
  bool have_best = false;
  int used = 0;
  std::string last_error;
  for (int s = 0; s < cfg.restarts; ++s) {
    ++used;
    RngStream rng = rng_stream(cfg.seed, static_cast<std::uint64_t>(s));
    try {
      detail::IqrRun run = detail::iqr_single_start(x, xt, tau, r, cfg, rng);
      const double obj = run.trace.back();
      if (!have_best || obj < best_obj) {
        best_obj = obj;
        best = std::move(run);
        have_best = true;
      }
    } catch (const ConvergenceError& e) {
      last_error = e.what();
    }
  }
  if (!have_best) throw ConvergenceError("IQR: every restart failed (" + last_error + ")");

  FactorFit fit;
  NormalizedFit nf = detail::normalize_or_project(best.loadings, best.factors, &fit.warnings);
  fit.loadings = std::move(nf.loadings);
  fit.factors = std::move(nf.factors);
  fit.tau = tau;
  fit.r = r;
  fit.objective = cfg.loss == IqrLoss::Check ? objective(x, fit.loadings, fit.factors, tau) : best_obj;
  fit.objective_trace = std::move(best.trace);
  fit.iterations = best.iterations;
  fit.converged = best.converged;
  fit.restarts_used = used;
  if (!p.standardized()) fit.warnings.push_back("panel is not standardized; estimates depend on unit scales");
  if (!fit.converged) fit.warnings.push_back("IQR reached max_iterations before the objective stabilized");
  return fit;
}

/// Factors fixed at the PCA estimate; loadings from unit-by-unit quantile
/// regressions on them at level tau. No alternation.
inline FactorFit two_stage_estimate(const PanelData& p, double tau, int r, const IqrConfig& cfg = {}) {
  const Eigen::MatrixXd& x = p.values();
  detail::check_iqr_inputs(x, tau, r, cfg, p.unit_ids());
  const PcaFit pca = pca_estimate(x, r);
  FactorFit fit;
  fit.factors = pca.factors;
  fit.loadings.resize(x.cols(), r);
  QrSolver solver;
  QrSolveOptions opts;
  opts.optimality_tol = cfg.inner_tol;
  std::vector<Eigen::Index> basis;
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    const Eigen::VectorXd prev = Eigen::VectorXd::Zero(r);
    fit.loadings.row(i) = detail::robust_qr(solver, x.col(i), fit.factors, tau, prev, basis, opts).transpose();
  }
  fit.tau = tau;
  fit.r = r;
  fit.objective = objective(x, fit.loadings, fit.factors, tau);
  fit.objective_trace = {fit.objective};
  fit.iterations = 0;
  fit.converged = true;
  fit.restarts_used = 0;
  if (!p.standardized()) fit.warnings.push_back("panel is not standardized; estimates depend on unit scales");
  return fit;
}

}  // namespace qfactor
