#pragma once

// JSON serialization of fits, selection results and DGP specs.

#include "qfactor/dgp.hpp"
#include "qfactor/error.hpp"
#include "qfactor/qfa.hpp"
#include "qfactor/select.hpp"
#include "qfactor/sqr.hpp"

#include <json.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

namespace qfactor {

using Json = nlohmann::json;

/// Row-major nested array.
inline Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const Json& j) {
  if (!j.is_array()) throw ParseError("expected a nested array", 0, 0);
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows == 0 ? 0 : static_cast<Eigen::Index>(j.at(0).size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(j.at(static_cast<std::size_t>(i)).size()) != cols) {
      throw ParseError("ragged matrix", static_cast<std::size_t>(i + 1), 0);
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(i, c) = j.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(c)).get<double>();
    }
  }
  return m;
}

/// NaN and infinities become null so that the output stays valid JSON.
inline Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json to_json(const FactorFit& fit) {
  Json j;
  j["tau"] = fit.tau;
  j["r"] = fit.r;
  j["objective"] = fit.objective;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  j["restarts_used"] = fit.restarts_used;
  j["objective_trace"] = fit.objective_trace;
  j["warnings"] = fit.warnings;
  j["loadings"] = matrix_to_json(fit.loadings);
  j["factors"] = matrix_to_json(fit.factors);
  return j;
}

inline FactorFit fit_from_json(const Json& j) {
  FactorFit fit;
  fit.tau = j.at("tau").get<double>();
  fit.r = j.at("r").get<int>();
  fit.objective = j.at("objective").get<double>();
  fit.converged = j.at("converged").get<bool>();
  fit.loadings = matrix_from_json(j.at("loadings"));
  fit.factors = matrix_from_json(j.at("factors"));
  if (j.contains("iterations")) fit.iterations = j.at("iterations").get<int>();
  if (j.contains("restarts_used")) fit.restarts_used = j.at("restarts_used").get<int>();
  if (j.contains("objective_trace")) fit.objective_trace = j.at("objective_trace").get<std::vector<double>>();
  if (j.contains("warnings")) fit.warnings = j.at("warnings").get<std::vector<std::string>>();
  return fit;
}

inline Json to_json(const SqrFit& fit) {
  Json j = to_json(static_cast<const FactorFit&>(fit));
  j["check_objective"] = fit.check_objective;
  j["h"] = fit.h_used;
  j["b"] = fit.b_used;
  Json lc = Json::array();
  for (const auto& m : fit.loading_cov) lc.push_back(matrix_to_json(m));
  Json fc = Json::array();
  for (const auto& m : fit.factor_cov) fc.push_back(matrix_to_json(m));
  j["loading_cov"] = std::move(lc);
  j["factor_cov"] = std::move(fc);
  return j;
}

inline Json to_json(const SelectionResult& s) {
  Json j;
  j["method"] = to_string(s.method);
  j["r_hat"] = s.r_hat;
  j["k_max"] = s.k_max;
  Json diag = Json::array();
  for (double v : s.diagnostics) diag.push_back(number_or_null(v));
  j["diagnostics"] = std::move(diag);
  j["threshold"] = s.threshold ? number_or_null(*s.threshold) : Json(nullptr);
  j["tau"] = s.tau ? Json(*s.tau) : Json(nullptr);
  return j;
}

inline Json to_json(const DgpSpec& spec) {
  Json j;
  j["name"] = to_string(spec.name);
  j["N"] = spec.N;
  j["T"] = spec.T;
  j["seed"] = spec.seed;
  j["params"] = resolved_params(spec);
  return j;
}

inline DgpSpec dgp_spec_from_json(const Json& j) {
  DgpSpec spec;
  try {
    spec.name = parse_dgp_name(j.at("name").get<std::string>());
    if (j.contains("N")) spec.N = j.at("N").get<int>();
    if (j.contains("T")) spec.T = j.at("T").get<int>();
    if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("params")) spec.params = j.at("params").get<std::map<std::string, double>>();
  } catch (const Json::exception& e) {
    throw SpecError(std::string("invalid DGP spec: ") + e.what());
  }
  resolved_params(spec);
  return spec;
}

}  // namespace qfactor
