#pragma once

// Exact linear quantile regression:
//
//   minimize (1/n) sum_i rho_tau(y_i - z_i' b)
//
// solved as a linear program by a vertex-to-vertex (simplex) descent in the
// style of Barrodale-Roberts. A vertex is described by a basis h of d
// observations that are interpolated exactly (Z_h b = y_h). At each vertex the
// 2d edge directions +/- Z_h^{-1} e_j are priced; the most negative directional
// derivative is followed with an exact line search over the residual sign
// changes (a weighted-median step), after which the crossing observation
// replaces observation j in the basis.
//
// Alternating factor estimation produces highly degenerate problems: many
// observations are fitted exactly by the previous half-step. The descent
// therefore runs on y_i + delta * xi_i with a fixed generic xi and delta a
// tiny multiple of max|y_i|, which makes every vertex non-degenerate so that
// each pivot strictly lowers the objective. The returned coefficients
// interpolate the unperturbed y on the final basis; the objective error this
// introduces is of order delta.

#include "qfactor/error.hpp"
#include "qfactor/mathkit/loss.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace qfactor {

struct QrSolveResult {
  Eigen::VectorXd coefficients;
  double objective = 0.0;  ///< mean check loss at coefficients
  bool converged = false;
  int iterations = 0;                ///< simplex pivots taken
  std::vector<Eigen::Index> basis;   ///< observations interpolated at the optimal vertex
};

struct QrSolveOptions {
  /// Relative tolerance on reduced costs when certifying optimality.
  double optimality_tol = 1e-10;
  /// Pivot cap; 0 selects 10(n + d) + 100.
  int max_iterations = 0;
  /// Relative singular-value threshold for the rank test on a cold start.
  double rank_tol = 1e-10;
};

/// Reusable solver: keeps its scratch buffers between calls so that the
/// thousands of small regressions in an IQR sweep do not allocate.
class QrSolver {
 public:
  QrSolveResult solve(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::MatrixXd>& z,
                      double tau, const std::vector<Eigen::Index>* basis_hint = nullptr,
                      const QrSolveOptions& opts = {}) {
    detail::require_quantile(tau);
    const Eigen::Index n = z.rows();
    const Eigen::Index d = z.cols();
    if (d < 1 || n < d) throw DimensionError("qr_solve requires n >= d >= 1");
    if (y.size() != n) throw DimensionError("qr_solve: response length does not match design rows");

    QrSolveResult out;
    out.basis = initial_basis(z, basis_hint, opts.rank_tol);
    const int cap = opts.max_iterations > 0 ? opts.max_iterations : static_cast<int>(10 * (n + d) + 100);

    // Each retry enlarges the perturbation; a cycle can only arise when
    // floating-point noise rivals it.
    const double y_scale = std::max(1.0, y.cwiseAbs().maxCoeff());
    double delta = kPerturbation * y_scale;
    int total = 0;
    for (int attempt = 0;; ++attempt) {
      perturbed_.resize(n);
      for (Eigen::Index i = 0; i < n; ++i) perturbed_(i) = y(i) + delta * perturbation(i);
      int used = 0;
      const bool done = pivot(z, tau, cap, opts, out.basis, used);
      total += used;
      if (done) break;
      if (attempt == 2) {
        Eigen::VectorXd b = basic_solution(y, z, out.basis);
        throw ConvergenceError("qr_solve: pivot limit reached", std::move(b));
      }
      delta *= 1e3;
    }

    out.iterations = total;
    out.coefficients = basic_solution(y, z, out.basis);
    out.converged = true;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) sum += detail::rho(y(i) - z.row(i).dot(out.coefficients), tau);
    out.objective = sum / static_cast<double>(n);
    return out;
  }

 private:
  struct Breakpoint {
    double step;
    double weight;
    Eigen::Index index;
  };

  static constexpr double kPerturbation = 1e-11;

  Eigen::VectorXd basic_solution(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::MatrixXd>& z,
                                 const std::vector<Eigen::Index>& basis) {
    const Eigen::Index d = z.cols();
    Eigen::MatrixXd zh(d, d);
    Eigen::VectorXd yh(d);
    for (Eigen::Index k = 0; k < d; ++k) {
      zh.row(k) = z.row(basis[static_cast<std::size_t>(k)]);
      yh(k) = y(basis[static_cast<std::size_t>(k)]);
    }
    lu_.compute(zh);
    return lu_.solve(yh);
  }

  // Simplex descent on the perturbed response. Returns true at optimality,
  // false when `cap` pivots were used; `basis` holds the last vertex.
  bool pivot(const Eigen::Ref<const Eigen::MatrixXd>& z, double tau, int cap, const QrSolveOptions& opts,
             std::vector<Eigen::Index>& basis, int& used) {
    const Eigen::Index n = z.rows();
    const Eigen::Index d = z.cols();
    is_basic_.assign(static_cast<std::size_t>(n), 0);
    sign_.resize(n);
    psi_.resize(n);
    Eigen::MatrixXd zh(d, d);
    Eigen::VectorXd yh(d);
    Eigen::VectorXd b(d);
    Eigen::VectorXd direction(d);

    for (used = 0;; ++used) {
      for (Eigen::Index k = 0; k < d; ++k) {
        const Eigen::Index obs = basis[static_cast<std::size_t>(k)];
        zh.row(k) = z.row(obs);
        yh(k) = perturbed_(obs);
      }
      lu_.compute(zh);
      inverse_ = lu_.inverse();
      b.noalias() = inverse_ * yh;
      resid_.noalias() = perturbed_ - z * b;

      std::fill(is_basic_.begin(), is_basic_.end(), 0);
      for (Eigen::Index obs : basis) is_basic_[static_cast<std::size_t>(obs)] = 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (is_basic_[static_cast<std::size_t>(i)]) {
          resid_(i) = 0.0;
          sign_(i) = 0.0;
          psi_(i) = 0.0;
        } else if (resid_(i) > 0.0) {
          sign_(i) = 1.0;
          psi_(i) = tau;
        } else {
          sign_(i) = -1.0;
          psi_(i) = tau - 1.0;
        }
      }
      if (used >= cap) return false;

      gradient_.noalias() = z.transpose() * psi_;
      reduced_.noalias() = inverse_.transpose() * gradient_;

      // Price the 2d edges; the most negative directional derivative wins.
      double best = 0.0;
      Eigen::Index leave = -1;
      double leave_sign = 0.0;
      for (Eigen::Index j = 0; j < d; ++j) {
        const double up = -reduced_(j) + (1.0 - tau);
        const double down = reduced_(j) + tau;
        if (up < best) {
          best = up;
          leave = j;
          leave_sign = 1.0;
        }
        if (down < best) {
          best = down;
          leave = j;
          leave_sign = -1.0;
        }
      }
      const double threshold = opts.optimality_tol * 1e-2 * (1.0 + reduced_.cwiseAbs().maxCoeff());
      if (leave < 0 || best >= -threshold) return true;

      direction = leave_sign * inverse_.col(leave);
      step_.noalias() = z * direction;
      const double step_scale = step_.cwiseAbs().maxCoeff();

      candidates_.clear();
      for (Eigen::Index i = 0; i < n; ++i) {
        if (is_basic_[static_cast<std::size_t>(i)]) continue;
        const double a = step_(i);
        if (sign_(i) * a <= 0.0 || std::abs(a) <= 1e-12 * step_scale) continue;
        candidates_.push_back({resid_(i) / a, std::abs(a), i});
      }
      // Walk the breakpoints in increasing order until the directional
      // derivative turns non-negative; a heap avoids sorting the whole list.
      auto later = [](const Breakpoint& l, const Breakpoint& r) {
        if (l.step != r.step) return l.step > r.step;
        return l.index > r.index;
      };
      std::make_heap(candidates_.begin(), candidates_.end(), later);
      double slope = best;
      Eigen::Index enter = -1;
      for (auto end = candidates_.end(); end != candidates_.begin(); --end) {
        std::pop_heap(candidates_.begin(), end, later);
        const Breakpoint& bp = *(end - 1);
        slope += bp.weight;
        if (slope >= 0.0) {
          enter = bp.index;
          break;
        }
      }
      if (enter < 0) {
        throw ConvergenceError("qr_solve: objective unbounded along an edge (design rank deficient?)", b);
      }
      basis[static_cast<std::size_t>(leave)] = enter;
    }
  }

  static double perturbation(Eigen::Index i) noexcept {
    // Weyl sequence: distinct, irrational-looking values in [0.5, 1.5).
    const double x = static_cast<double>(i + 1) * 0.6180339887498949;
    return 0.5 + (x - std::floor(x));
  }

  std::vector<Eigen::Index> initial_basis(const Eigen::Ref<const Eigen::MatrixXd>& z,
                                          const std::vector<Eigen::Index>* hint, double rank_tol) {
    const Eigen::Index n = z.rows();
    const Eigen::Index d = z.cols();
    if (hint != nullptr && static_cast<Eigen::Index>(hint->size()) == d) {
      bool valid = true;
      std::vector<char> seen(static_cast<std::size_t>(n), 0);
      for (Eigen::Index obs : *hint) {
        if (obs < 0 || obs >= n || seen[static_cast<std::size_t>(obs)]) {
          valid = false;
          break;
        }
        seen[static_cast<std::size_t>(obs)] = 1;
      }
      if (valid) {
        Eigen::MatrixXd zh(d, d);
        for (Eigen::Index k = 0; k < d; ++k) zh.row(k) = z.row((*hint)[static_cast<std::size_t>(k)]);
        lu_.compute(zh);
        if (lu_.rcond() > 1e-10) return *hint;
      }
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d, n);
    qr.setThreshold(rank_tol);
    qr.compute(z.transpose());
    if (qr.rank() < d) {
      throw RankError("qr_solve: design matrix has rank " + std::to_string(qr.rank()) + " < " +
                      std::to_string(d));
    }
    std::vector<Eigen::Index> basis(static_cast<std::size_t>(d));
    for (Eigen::Index k = 0; k < d; ++k) basis[static_cast<std::size_t>(k)] = qr.colsPermutation().indices()(k);
    return basis;
  }

  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
  Eigen::MatrixXd inverse_;
  Eigen::VectorXd perturbed_;
  Eigen::VectorXd resid_;
  Eigen::VectorXd sign_;
  Eigen::VectorXd psi_;
  Eigen::VectorXd gradient_;
  Eigen::VectorXd reduced_;
  Eigen::VectorXd step_;
  std::vector<char> is_basic_;
  std::vector<Breakpoint> candidates_;
};

/// One-shot quantile regression of y on the columns of z (no intercept is added).
inline QrSolveResult qr_solve(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::MatrixXd>& z,
                              double tau, const QrSolveOptions& opts = {}) {
  QrSolver solver;
  return solver.solve(y, z, tau, nullptr, opts);
}

}  // namespace qfactor
