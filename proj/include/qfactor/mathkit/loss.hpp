#pragma once

// Check loss, kernel-smoothed check loss, and the kernels used for smoothing
// (eighth-order polynomial kernel) and density estimation (Epanechnikov).

#include "qfactor/error.hpp"

#include <cmath>
#include <string>

namespace qfactor {

namespace detail {

inline void require_quantile(double tau) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw DomainError("quantile level must lie in (0,1), got " + std::to_string(tau));
  }
}

/// Unchecked check loss for hot loops.
inline double rho(double u, double tau) noexcept { return u > 0.0 ? tau * u : (tau - 1.0) * u; }

/// Subgradient used by the simplex solver: tau for positive residuals, tau-1 otherwise.
inline double psi(double u, double tau) noexcept { return u > 0.0 ? tau : tau - 1.0; }

// k8(z) = c * P(z^2) on [-1,1]
inline constexpr double kK8Scale = 3465.0 / 8192.0;

inline double k8_poly(double w) noexcept {
  return ((((-221.0 * w + 715.0) * w - 858.0) * w + 462.0) * w - 105.0) * w + 7.0;
}

inline double k8_poly_deriv(double w) noexcept {
  return (((-1105.0 * w + 2860.0) * w - 2574.0) * w + 924.0) * w - 105.0;
}

// Antiderivative of k8 divided by (c z): Q(w) with G(z) = c z Q(z^2), G(1) = 1/2.
inline double k8_antideriv_poly(double w) noexcept {
  return ((((-221.0 / 11.0 * w + 715.0 / 9.0) * w - 858.0 / 7.0) * w + 462.0 / 5.0) * w - 35.0) * w +
         7.0;
}

}  // namespace detail

/// (tau - 1{u <= 0}) u
inline double check_loss(double u, double tau) {
  detail::require_quantile(tau);
  return detail::rho(u, tau);
}

/// Eighth-order kernel supported on [-1,1]: moments 1..7 vanish, the eighth does not.
inline double kernel_k8(double z) noexcept {
  if (std::abs(z) > 1.0) return 0.0;
  return detail::kK8Scale * detail::k8_poly(z * z);
}

inline double kernel_k8_derivative(double z) noexcept {
  if (std::abs(z) > 1.0) return 0.0;
  return detail::kK8Scale * detail::k8_poly_deriv(z * z) * 2.0 * z;
}

/// K(z) = 1 - int_{-1}^{z} k8(s) ds, evaluated from the closed-form antiderivative.
inline double kernel_k8_survival(double z) noexcept {
  if (z <= -1.0) return 1.0;
  if (z >= 1.0) return 0.0;
  return 0.5 - detail::kK8Scale * z * detail::k8_antideriv_poly(z * z);
}

inline double kernel_epanechnikov(double z) noexcept {
  if (std::abs(z) > 1.0) return 0.0;
  return 0.75 * (1.0 - z * z);
}

struct SmoothedLoss {
  double value;
  double first;   ///< d/du
  double second;  ///< d2/du2
};

namespace detail {

inline SmoothedLoss smoothed_unchecked(double u, double tau, double h) noexcept {
  const double z = u / h;
  if (z >= 1.0) return {tau * u, tau, 0.0};
  if (z <= -1.0) return {(tau - 1.0) * u, tau - 1.0, 0.0};
  const double k = kernel_k8(z);
  const double big_k = kernel_k8_survival(z);
  const double dk = kernel_k8_derivative(z);
  return {(tau - big_k) * u, tau - big_k + z * k, (2.0 * k + z * dk) / h};
}

}  // namespace detail

/// [tau - K(u/h)] u with analytic first and second derivatives in u.
/// Coincides with check_loss whenever |u| >= h.
inline SmoothedLoss smoothed_loss(double u, double tau, double h) {
  detail::require_quantile(tau);
  if (!(h > 0.0)) throw DomainError("smoothing bandwidth must be positive");
  return detail::smoothed_unchecked(u, tau, h);
}

}  // namespace qfactor
