#pragma once

// Seeded generators for the simulation designs, returning the panel together
// with the ground-truth factor structure at any quantile level.

#include "qfactor/distributions.hpp"
#include "qfactor/error.hpp"
#include "qfactor/panel.hpp"
#include "qfactor/rng.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace qfactor {

enum class DgpName {
  Example1,
  Example2,
  Example3,
  Example4,
  Table1Outliers,
  Case1Indep,
  Case2Student3,
  Case3Serial,
  Case4SerialCross,
  FigSqr,
};

inline const std::vector<std::pair<DgpName, std::string>>& dgp_names() {
  static const std::vector<std::pair<DgpName, std::string>> names = {
      {DgpName::Example1, "example1"},         {DgpName::Example2, "example2"},
      {DgpName::Example3, "example3"},         {DgpName::Example4, "example4"},
      {DgpName::Table1Outliers, "table1_outliers"}, {DgpName::Case1Indep, "case1_indep"},
      {DgpName::Case2Student3, "case2_student3"},   {DgpName::Case3Serial, "case3_serial"},
      {DgpName::Case4SerialCross, "case4_serial_cross"}, {DgpName::FigSqr, "fig_sqr"},
  };
  return names;
}

inline std::string to_string(DgpName name) {
  for (const auto& [value, text] : dgp_names())
    if (value == name) return text;
  throw SpecError("unknown DGP enum value");
}

inline DgpName parse_dgp_name(const std::string& text) {
  for (const auto& [value, name] : dgp_names())
    if (name == text) return value;
  throw SpecError("unknown DGP name '" + text + "'");
}

/// Declarative simulation design. Recognized params (defaults depend on name):
///   beta  serial AR coefficient of the case errors, in [0,1)
///   rho   cross-sectional spillover weight of the case errors
///   J     half-width of the cross-sectional neighbourhood, integer >= 0
///   mix   probability of a Gaussian (vs Cauchy) draw in table1_outliers, in [0,1]
///   df    error law: 0 = standard normal, k >= 1 = Student(k) (k = 1 is Cauchy)
struct DgpSpec {
  DgpName name = DgpName::Case1Indep;
  int N = 100;
  int T = 100;
  std::map<std::string, double> params;
  std::uint64_t seed = 1;
};

namespace detail {

inline std::map<std::string, double> default_params(DgpName name) {
  switch (name) {
    case DgpName::Table1Outliers:
      return {{"mix", 0.98}};
    case DgpName::Case1Indep:
      return {{"beta", 0.0}, {"rho", 0.0}, {"J", 0.0}, {"df", 0.0}};
    case DgpName::Case2Student3:
      return {{"beta", 0.0}, {"rho", 0.0}, {"J", 0.0}, {"df", 3.0}};
    case DgpName::Case3Serial:
      return {{"beta", 0.2}, {"rho", 0.0}, {"J", 0.0}, {"df", 0.0}};
    case DgpName::Case4SerialCross:
      return {{"beta", 0.2}, {"rho", 0.2}, {"J", 3.0}, {"df", 0.0}};
    case DgpName::Example1:
    case DgpName::Example2:
    case DgpName::Example3:
      return {{"df", 0.0}};
    case DgpName::Example4:
    case DgpName::FigSqr:
      return {};
  }
  return {};
}

inline bool is_whole(double v) { return std::floor(v) == v; }

}  // namespace detail

/// Params merged with the design's defaults, after validation.
inline std::map<std::string, double> resolved_params(const DgpSpec& spec) {
  std::map<std::string, double> out = detail::default_params(spec.name);
  for (const auto& [key, value] : spec.params) {
    if (out.find(key) == out.end()) {
      throw SpecError("parameter '" + key + "' is not used by DGP " + to_string(spec.name));
    }
    out[key] = value;
  }
  if (spec.N < 2 || spec.T < 2) throw SpecError("DGP requires N >= 2 and T >= 2");
  if (auto it = out.find("beta"); it != out.end() && !(it->second >= 0.0 && it->second < 1.0)) {
    throw SpecError("beta must lie in [0,1)");
  }
  if (auto it = out.find("J"); it != out.end() && !(it->second >= 0.0 && detail::is_whole(it->second))) {
    throw SpecError("J must be a non-negative integer");
  }
  if (auto it = out.find("mix"); it != out.end() && !(it->second >= 0.0 && it->second <= 1.0)) {
    throw SpecError("mix must lie in [0,1]");
  }
  if (auto it = out.find("df"); it != out.end() && !(it->second >= 0.0 && detail::is_whole(it->second))) {
    throw SpecError("df must be 0 (normal) or a positive integer");
  }
  if (auto it = out.find("rho"); it != out.end() && !std::isfinite(it->second)) throw SpecError("rho must be finite");
  return out;
}

/// Raw draws behind a simulated panel.
struct DgpComponents {
  Eigen::MatrixXd factors;   ///< T x K primitive factor paths (f1, f2, ...)
  Eigen::MatrixXd loadings;  ///< N x K primitive loadings, in the design's own order
  Eigen::MatrixXd errors;    ///< T x N idiosyncratic draws (u, e or epsilon)
  long cauchy_draws = 0;     ///< table1_outliers: number of contaminated cells
};

class SimulatedPanel {
 public:
  SimulatedPanel(PanelData panel_in, DgpSpec spec_in, DgpComponents components_in)
      : panel(std::move(panel_in)), spec(std::move(spec_in)), components(std::move(components_in)),
        params_(resolved_params(this->spec)) {}

  PanelData panel;
  DgpSpec spec;
  DgpComponents components;

  int r_true_at(double tau) const {
    const bool median = is_median(tau);
    switch (spec.name) {
      case DgpName::Table1Outliers:
        return median ? 3 : 4;
      case DgpName::Case1Indep:
      case DgpName::Case2Student3:
      case DgpName::Case3Serial:
      case DgpName::Case4SerialCross:
        return median ? 2 : 3;
      case DgpName::Example1:
      case DgpName::Example3:
        return median ? 1 : 2;
      case DgpName::Example4:
        return median ? 1 : 3;
      case DgpName::Example2:
      case DgpName::FigSqr:
        return 1;
    }
    return 0;
  }

  /// T x r(tau) true quantile factors.
  Eigen::MatrixXd true_factors_at(double tau) const {
    const Eigen::MatrixXd& f = components.factors;
    const Eigen::Index t = f.rows();
    const bool median = is_median(tau);
    switch (spec.name) {
      case DgpName::Table1Outliers:
        if (median) return f;
        return hcat(f, Eigen::MatrixXd::Ones(t, 1));
      case DgpName::Case1Indep:
      case DgpName::Case2Student3:
      case DgpName::Case3Serial:
      case DgpName::Case4SerialCross:
        return median ? Eigen::MatrixXd(f.leftCols(2)) : f;
      case DgpName::Example1:
        if (median) return f;
        return hcat(Eigen::MatrixXd::Ones(t, 1), f);
      case DgpName::Example3:
      case DgpName::Example4:
        return median ? Eigen::MatrixXd(f.leftCols(1)) : f;
      case DgpName::Example2:
      case DgpName::FigSqr:
        return f;
    }
    return f;
  }

  /// N x r(tau) true quantile loadings, columns matching true_factors_at.
  Eigen::MatrixXd true_loadings_at(double tau) const {
    detail_require(tau);
    const Eigen::MatrixXd& l = components.loadings;
    const Eigen::Index n = l.rows();
    const bool median = is_median(tau);
    switch (spec.name) {
      case DgpName::Table1Outliers: {
        if (median) return l;
        const double mix = params_.at("mix");
        const double q = invert_cdf(
            [mix](double x) { return mix * normal_cdf(x) + (1.0 - mix) * (0.5 + std::atan(x) / M_PI); }, tau);
        return hcat(l, Eigen::MatrixXd::Constant(n, 1, q));
      }
      case DgpName::Case1Indep:
      case DgpName::Case2Student3:
      case DgpName::Case3Serial:
      case DgpName::Case4SerialCross: {
        if (median) return l.leftCols(2);
        Eigen::MatrixXd out = l;
        for (Eigen::Index i = 0; i < n; ++i) out(i, 2) *= case_error_quantile(i, tau);
        return out;
      }
      case DgpName::Example1: {
        if (median) return l;
        return hcat(Eigen::MatrixXd::Constant(n, 1, error_quantile(tau)), l);
      }
      case DgpName::Example2: {
        // columns of l: alpha, eta
        return (l.col(1) * error_quantile(tau) + l.col(0)).eval();
      }
      case DgpName::Example3: {
        if (median) return l.leftCols(1);
        Eigen::MatrixXd out = l;
        out.col(1) *= error_quantile(tau);
        return out;
      }
      case DgpName::Example4: {
        // columns of l: alpha, c
        if (median) return l.leftCols(1);
        const double z = normal_quantile(tau);
        Eigen::MatrixXd out(n, 3);
        out.col(0) = l.col(0);
        out.col(1).setConstant(z);
        out.col(2) = l.col(1) * (z * z * z);
        return out;
      }
      case DgpName::FigSqr:
        return (l.array() + normal_quantile(tau)).matrix();
    }
    return l;
  }

 private:
  static bool is_median(double tau) {
    detail_require(tau);
    return std::abs(tau - 0.5) < 1e-12;
  }

  static void detail_require(double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw DomainError("quantile level must lie in (0,1)");
  }

  static Eigen::MatrixXd hcat(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd out(a.rows(), a.cols() + b.cols());
    out << a, b;
    return out;
  }

  double error_quantile(double tau) const {
    const int df = static_cast<int>(params_.at("df"));
    return df == 0 ? normal_quantile(tau) : student_quantile(tau, df);
  }

  // Marginal tau-quantile of e_it = beta e_{i,t-1} + v_it + rho * sum_{j in nb(i)} v_jt.
  double case_error_quantile(Eigen::Index i, double tau) const {
    const double beta = params_.at("beta");
    const double rho = params_.at("rho");
    const int df = static_cast<int>(params_.at("df"));
    const Eigen::Index half = static_cast<Eigen::Index>(params_.at("J"));
    if (df == 0) {
      const Eigen::Index n = components.loadings.rows();
      const Eigen::Index lo = std::max<Eigen::Index>(0, i - half);
      const Eigen::Index hi = std::min<Eigen::Index>(n - 1, i + half);
      const double neighbours = static_cast<double>(hi - lo);
      const double var = (1.0 + rho * rho * neighbours) / (1.0 - beta * beta);
      return std::sqrt(var) * normal_quantile(tau);
    }
    if (beta != 0.0 || (rho != 0.0 && half > 0)) {
      throw DomainError("true quantile loadings have no closed form for dependent Student errors");
    }
    return student_quantile(tau, df);
  }

  std::map<std::string, double> params_;
};

namespace detail {

inline constexpr int kBurnIn = 50;

// Stationary AR(1) start followed by a burn-in, then `length` recorded values.
inline Eigen::VectorXd ar1_path(RngStream& rng, double a, Eigen::Index length) {
  double x = rng.normal() / std::sqrt(1.0 - a * a);
  for (int k = 0; k < kBurnIn; ++k) x = a * x + rng.normal();
  Eigen::VectorXd out(length);
  for (Eigen::Index t = 0; t < length; ++t) {
    x = a * x + rng.normal();
    out(t) = x;
  }
  return out;
}

inline double draw_error(RngStream& rng, int df) {
  if (df == 0) return rng.normal();
  if (df == 1) return rng.cauchy();
  return rng.student(df);
}

// e_it = beta e_{i,t-1} + v_it + rho sum_{0<|j-i|<=J} v_jt, truncated at the panel edges.
inline Eigen::MatrixXd case_errors(RngStream& rng, Eigen::Index t_len, Eigen::Index n, double beta, double rho,
                                   Eigen::Index half, int df) {
  Eigen::MatrixXd e(t_len, n);
  Eigen::VectorXd state = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd v(n);
  Eigen::VectorXd prefix(n + 1);
  for (Eigen::Index step = 0; step < kBurnIn + t_len; ++step) {
    for (Eigen::Index i = 0; i < n; ++i) v(i) = draw_error(rng, df);
    prefix(0) = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) prefix(i + 1) = prefix(i) + v(i);
    for (Eigen::Index i = 0; i < n; ++i) {
      double spill = 0.0;
      if (rho != 0.0 && half > 0) {
        const Eigen::Index lo = std::max<Eigen::Index>(0, i - half);
        const Eigen::Index hi = std::min<Eigen::Index>(n - 1, i + half);
        spill = prefix(hi + 1) - prefix(lo) - v(i);
      }
      state(i) = beta * state(i) + v(i) + rho * spill;
    }
    if (step >= kBurnIn) e.row(step - kBurnIn) = state.transpose();
  }
  return e;
}

}  // namespace detail

/// Stream index reserved for draws shared by every replication (fig_sqr's
/// factor path and loadings).
inline constexpr std::uint64_t kStructureStream = ~std::uint64_t{0};

/// Generate replication `replication` of the design.
inline SimulatedPanel generate(const DgpSpec& spec, std::uint64_t replication = 0) {
  const auto params = resolved_params(spec);
  const Eigen::Index n = spec.N;
  const Eigen::Index t_len = spec.T;
  RngStream rng = rng_stream(spec.seed, replication);
  DgpComponents comp;
  Eigen::MatrixXd x(t_len, n);

  auto normal_matrix = [&rng](Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
    return m;
  };
  auto error_matrix = [&rng, t_len, n](int df) {
    Eigen::MatrixXd m(t_len, n);
    for (Eigen::Index t = 0; t < t_len; ++t)
      for (Eigen::Index i = 0; i < n; ++i) m(t, i) = detail::draw_error(rng, df);
    return m;
  };

  switch (spec.name) {
    case DgpName::Table1Outliers: {
      const double mix = params.at("mix");
      comp.loadings = normal_matrix(n, 3);
      comp.factors.resize(t_len, 3);
      const double coef[] = {0.8, 0.5, 0.2};
      for (int j = 0; j < 3; ++j) comp.factors.col(j) = detail::ar1_path(rng, coef[j], t_len);
      comp.errors.resize(t_len, n);
      for (Eigen::Index t = 0; t < t_len; ++t) {
        for (Eigen::Index i = 0; i < n; ++i) {
          if (rng.bernoulli(mix)) {
            comp.errors(t, i) = rng.normal();
          } else {
            comp.errors(t, i) = rng.cauchy();
            ++comp.cauchy_draws;
          }
        }
      }
      x = comp.factors * comp.loadings.transpose() + comp.errors;
      break;
    }
    case DgpName::Case1Indep:
    case DgpName::Case2Student3:
    case DgpName::Case3Serial:
    case DgpName::Case4SerialCross: {
      comp.loadings.resize(n, 3);
      for (Eigen::Index i = 0; i < n; ++i) {
        comp.loadings(i, 0) = rng.normal();
        comp.loadings(i, 1) = rng.normal();
        comp.loadings(i, 2) = rng.uniform(1.0, 2.0);
      }
      comp.factors.resize(t_len, 3);
      comp.factors.col(0) = detail::ar1_path(rng, 0.8, t_len);
      comp.factors.col(1) = detail::ar1_path(rng, 0.5, t_len);
      for (Eigen::Index t = 0; t < t_len; ++t) comp.factors(t, 2) = std::abs(rng.normal());
      comp.errors = detail::case_errors(rng, t_len, n, params.at("beta"), params.at("rho"),
                                        static_cast<Eigen::Index>(params.at("J")), static_cast<int>(params.at("df")));
      x = comp.factors.leftCols(2) * comp.loadings.leftCols(2).transpose();
      x.array() += (comp.factors.col(2) * comp.loadings.col(2).transpose()).array() * comp.errors.array();
      break;
    }
    case DgpName::Example1: {
      comp.loadings = normal_matrix(n, 1);
      comp.factors = detail::ar1_path(rng, 0.8, t_len);
      comp.errors = error_matrix(static_cast<int>(params.at("df")));
      x = comp.factors * comp.loadings.transpose() + comp.errors;
      break;
    }
    case DgpName::Example2: {
      comp.loadings.resize(n, 2);
      for (Eigen::Index i = 0; i < n; ++i) {
        comp.loadings(i, 0) = rng.normal();
        comp.loadings(i, 1) = rng.uniform(0.1, 0.3);  // small scale: the factor must be recoverable at N = T = 100
      }
      comp.factors = (detail::ar1_path(rng, 0.8, t_len).array().abs() + 0.5).matrix();
      comp.errors = error_matrix(static_cast<int>(params.at("df")));
      x = comp.factors * comp.loadings.col(0).transpose();
      x.array() += (comp.factors * comp.loadings.col(1).transpose()).array() * comp.errors.array();
      break;
    }
    case DgpName::Example3: {
      comp.loadings.resize(n, 2);
      for (Eigen::Index i = 0; i < n; ++i) {
        comp.loadings(i, 0) = rng.normal();
        comp.loadings(i, 1) = rng.uniform(1.0, 2.0);
      }
      comp.factors.resize(t_len, 2);
      comp.factors.col(0) = detail::ar1_path(rng, 0.8, t_len);
      for (Eigen::Index t = 0; t < t_len; ++t) comp.factors(t, 1) = std::abs(rng.normal());
      comp.errors = error_matrix(static_cast<int>(params.at("df")));
      x = comp.factors.col(0) * comp.loadings.col(0).transpose();
      x.array() += (comp.factors.col(1) * comp.loadings.col(1).transpose()).array() * comp.errors.array();
      break;
    }
    case DgpName::Example4: {
      comp.loadings.resize(n, 2);
      for (Eigen::Index i = 0; i < n; ++i) {
        comp.loadings(i, 0) = rng.normal();
        comp.loadings(i, 1) = rng.uniform(1.0, 2.0);
      }
      comp.factors.resize(t_len, 3);
      comp.factors.col(0) = detail::ar1_path(rng, 0.8, t_len);
      for (Eigen::Index t = 0; t < t_len; ++t) {
        comp.factors(t, 1) = rng.uniform(1.0, 2.0);
        comp.factors(t, 2) = rng.uniform(1.0, 2.0);
      }
      comp.errors = error_matrix(0);
      x = comp.factors.col(0) * comp.loadings.col(0).transpose();
      const Eigen::ArrayXXd e = comp.errors.array();
      x.array() += (comp.factors.col(1) * Eigen::RowVectorXd::Ones(n)).array() * e +
                   (comp.factors.col(2) * comp.loadings.col(1).transpose()).array() * e.cube();
      break;
    }
    case DgpName::FigSqr: {
      RngStream structure = rng_stream(spec.seed, kStructureStream);
      comp.factors.resize(t_len, 1);
      for (Eigen::Index t = 0; t < t_len; ++t) comp.factors(t, 0) = structure.uniform(1.0, 2.0);
      comp.factors /= std::sqrt(comp.factors.squaredNorm() / static_cast<double>(t_len));
      comp.loadings.resize(n, 1);
      for (Eigen::Index i = 0; i < n; ++i) comp.loadings(i, 0) = structure.normal();
      comp.errors = error_matrix(0);
      x = comp.factors * comp.loadings.transpose();
      x.array() += (comp.factors * Eigen::RowVectorXd::Ones(n)).array() * comp.errors.array();
      break;
    }
  }
  return SimulatedPanel(PanelData(std::move(x)), spec, std::move(comp));
}

}  // namespace qfactor
