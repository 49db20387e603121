#pragma once

// CDFs and quantile functions needed to state the true quantile loadings of
// the simulation designs.

#include "qfactor/error.hpp"

#include <cmath>
#include <functional>
#include <string>

namespace qfactor {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Inverse standard normal CDF (Acklam's rational approximation refined by
/// one Halley step, accurate to about 1e-15).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("normal_quantile: probability must lie in (0,1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                             1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                             6.680131188771972e+01,  -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                             -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                             3.754408661907416e+00};
  const double lo = 0.02425;
  double x;
  if (p < lo) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p > 1.0 - lo) {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

/// Student-t CDF for a positive integer number of degrees of freedom, from
/// the finite trigonometric series.
inline double student_cdf(double t, int df) {
  if (df < 1) throw DomainError("student_cdf: degrees of freedom must be >= 1");
  const double theta = std::atan(std::abs(t) / std::sqrt(static_cast<double>(df)));
  const double s = std::sin(theta);
  const double c2 = std::cos(theta) * std::cos(theta);
  double central;  // P(|T| <= |t|)
  if (df % 2 == 1) {
    double series = 0.0;
    if (df > 1) {
      double term = 1.0;
      series = 1.0;
      for (int k = 3; k <= df - 2; k += 2) {
        term *= c2 * static_cast<double>(k - 1) / static_cast<double>(k);
        series += term;
      }
      series *= s * std::cos(theta);
    }
    central = 2.0 / M_PI * (theta + series);
  } else {
    double term = 1.0;
    double series = 1.0;
    for (int k = 2; k <= df - 2; k += 2) {
      term *= c2 * static_cast<double>(k - 1) / static_cast<double>(k);
      series += term;
    }
    central = s * series;
  }
  return t >= 0.0 ? 0.5 + 0.5 * central : 0.5 - 0.5 * central;
}

/// Inverts a continuous increasing CDF by bracketing and bisection.
inline double invert_cdf(const std::function<double(double)>& cdf, double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("quantile: probability must lie in (0,1)");
  double lo = -1.0;
  double hi = 1.0;
  while (cdf(lo) > p) lo *= 2.0;
  while (cdf(hi) < p) hi *= 2.0;
  for (int k = 0; k < 200 && hi - lo > 1e-15 * std::max(1.0, std::abs(lo)); ++k) {
    const double mid = 0.5 * (lo + hi);
    if (cdf(mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

inline double student_quantile(double p, int df) {
  if (df == 1) return std::tan(M_PI * (p - 0.5));
  return invert_cdf([df](double x) { return student_cdf(x, df); }, p);
}

}  // namespace qfactor
