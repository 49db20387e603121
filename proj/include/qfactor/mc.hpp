#pragma once

// Monte Carlo harness: replicate a simulation design, run the estimators,
// align estimates with the truth and aggregate the table statistics.

#include "qfactor/detail/parallel.hpp"
#include "qfactor/dgp.hpp"
#include "qfactor/error.hpp"
#include "qfactor/json_io.hpp"
#include "qfactor/mathkit/ols.hpp"
#include "qfactor/pca.hpp"
#include "qfactor/qfa.hpp"
#include "qfactor/rng.hpp"
#include "qfactor/select.hpp"
#include "qfactor/sqr.hpp"

#include <Eigen/Dense>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace qfactor {

/// Estimators the harness can run. Names are the strings accepted by
/// parse_mc_method.
enum class McMethod {
  RankMin,     ///< "rank_min": r from rank minimization, R2 from an IQR refit with that r
  IcQfa,       ///< "ic_qfa": penalized check-loss criterion, R2 from an IQR refit
  PcP1,        ///< "pc_p1"
  IcP1,        ///< "ic_p1"
  EigenRatio,  ///< "eigen_ratio"
  QfaKnown,    ///< "qfa_known": IQR with the true (or configured) number of factors
  PcaKnown,    ///< "pca_known": PCA with the true (or configured) number of mean factors
  Sqr,         ///< "sqr": smoothed QR with known r plus the standardized factor statistic
};

inline const std::vector<std::pair<McMethod, std::string>>& mc_method_names() {
  static const std::vector<std::pair<McMethod, std::string>> names = {
      {McMethod::RankMin, "rank_min"},      {McMethod::IcQfa, "ic_qfa"},       {McMethod::PcP1, "pc_p1"},
      {McMethod::IcP1, "ic_p1"},            {McMethod::EigenRatio, "eigen_ratio"}, {McMethod::QfaKnown, "qfa_known"},
      {McMethod::PcaKnown, "pca_known"},    {McMethod::Sqr, "sqr"},
  };
  return names;
}

inline std::string to_string(McMethod m) {
  for (const auto& [value, name] : mc_method_names())
    if (value == m) return name;
  return "unknown";
}

inline McMethod parse_mc_method(const std::string& text) {
  for (const auto& [value, name] : mc_method_names())
    if (name == text) return value;
  throw SpecError("unknown Monte Carlo method '" + text + "'");
}

/// Mean-factor methods ignore the quantile level.
inline bool is_quantile_method(McMethod m) {
  return m == McMethod::RankMin || m == McMethod::IcQfa || m == McMethod::QfaKnown || m == McMethod::Sqr;
}

struct McConfig {
  DgpSpec spec;
  std::vector<McMethod> methods;
  std::vector<double> taus{0.5};
  int n_reps = 100;
  int threads = 1;
  int k = 8;
  std::optional<int> known_r;  ///< overrides r_true for the *_known and sqr methods
  bool refit_r2 = true;        ///< compute R2 for rank_min / ic_qfa by refitting r-hat factors
  IcPenalty ic_penalty;
  IqrConfig iqr;
  SqrConfig sqr;
};

struct McFailure {
  int replication = 0;
  std::string error;
};

struct McSummary {
  std::string method;
  std::optional<double> tau;
  int r_true = 0;
  int n_ok = 0;
  std::vector<McFailure> failures;
  std::array<double, 3> triple{0.0, 0.0, 0.0};  ///< P(r<r0), P(r=r0), P(r>r0)
  double mean_r_hat = 0.0;
  std::vector<double> mean_r2;  ///< per primitive true factor
  std::vector<double> stats;    ///< standardized statistics (sqr only), replication order
};

struct McResult {
  DgpSpec spec;
  int replications = 0;
  std::vector<McSummary> summaries;
  double wall_seconds = 0.0;  ///< excluded from JSON to keep it reproducible
};

/// Column permutation and sign flips that align an estimate with the truth.
struct Alignment {
  std::vector<Eigen::Index> order;  ///< estimated column placed at each output position
  std::vector<double> sign;         ///< +1/-1 per output position
};

inline double correlation(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) {
  const Eigen::ArrayXd da = a.array() - a.mean();
  const Eigen::ArrayXd db = b.array() - b.mean();
  const double denom = std::sqrt((da * da).sum() * (db * db).sum());
  return denom > 0.0 ? (da * db).sum() / denom : 0.0;
}

/// Greedy matching by largest |correlation|: matched estimated columns are put
/// in truth order with signs making the correlation positive, unmatched ones
/// follow in their original order unchanged.
inline Alignment alignment_to_truth(const Eigen::Ref<const Eigen::MatrixXd>& estimated,
                                    const Eigen::Ref<const Eigen::MatrixXd>& truth) {
  const Eigen::Index re = estimated.cols();
  const Eigen::Index rt = truth.cols();
  Eigen::MatrixXd corr(re, rt);
  for (Eigen::Index a = 0; a < re; ++a)
    for (Eigen::Index b = 0; b < rt; ++b) corr(a, b) = correlation(estimated.col(a), truth.col(b));
  std::vector<Eigen::Index> match_of_truth(static_cast<std::size_t>(rt), -1);
  std::vector<char> used(static_cast<std::size_t>(re), 0);
  for (Eigen::Index step = 0; step < std::min(re, rt); ++step) {
    double best = -1.0;
    Eigen::Index ba = -1;
    Eigen::Index bb = -1;
    for (Eigen::Index a = 0; a < re; ++a) {
      if (used[static_cast<std::size_t>(a)]) continue;
      for (Eigen::Index b = 0; b < rt; ++b) {
        if (match_of_truth[static_cast<std::size_t>(b)] >= 0) continue;
        if (std::abs(corr(a, b)) > best) {
          best = std::abs(corr(a, b));
          ba = a;
          bb = b;
        }
      }
    }
    used[static_cast<std::size_t>(ba)] = 1;
    match_of_truth[static_cast<std::size_t>(bb)] = ba;
  }
  Alignment out;
  for (Eigen::Index b = 0; b < rt; ++b) {
    const Eigen::Index a = match_of_truth[static_cast<std::size_t>(b)];
    if (a < 0) continue;
    out.order.push_back(a);
    out.sign.push_back(corr(a, b) < 0.0 ? -1.0 : 1.0);
  }
  for (Eigen::Index a = 0; a < re; ++a) {
    if (used[static_cast<std::size_t>(a)]) continue;
    out.order.push_back(a);
    out.sign.push_back(1.0);
  }
  return out;
}

inline FactorFit apply_alignment(const FactorFit& fit, const Alignment& al) {
  FactorFit out = fit;
  for (std::size_t k = 0; k < al.order.size(); ++k) {
    const auto col = static_cast<Eigen::Index>(k);
    out.factors.col(col) = al.sign[k] * fit.factors.col(al.order[k]);
    out.loadings.col(col) = al.sign[k] * fit.loadings.col(al.order[k]);
  }
  return out;
}

inline SqrFit apply_alignment(const SqrFit& fit, const Alignment& al) {
  SqrFit out = fit;
  static_cast<FactorFit&>(out) = apply_alignment(static_cast<const FactorFit&>(fit), al);
  const Eigen::Index r = static_cast<Eigen::Index>(al.order.size());
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(r, r);  // new = P' old P
  for (Eigen::Index k = 0; k < r; ++k) p(al.order[static_cast<std::size_t>(k)], k) = al.sign[static_cast<std::size_t>(k)];
  for (auto& m : out.loading_cov) m = p.transpose() * m * p;
  for (auto& m : out.factor_cov) m = p.transpose() * m * p;
  return out;
}

/// Flip/permute estimated columns to match the true quantile factors at fit.tau.
inline FactorFit align_to_truth(const FactorFit& fit, const SimulatedPanel& truth) {
  return apply_alignment(fit, alignment_to_truth(fit.factors, truth.true_factors_at(fit.tau)));
}

namespace detail {

struct McSlot {
  McMethod method;
  std::optional<double> tau;
};

struct McRecord {
  bool failed = false;
  std::string error;
  int r_hat = 0;
  std::vector<double> r2;
  double stat = std::numeric_limits<double>::quiet_NaN();
};

inline std::vector<double> r2_on(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& estimated) {
  std::vector<double> out;
  for (Eigen::Index j = 0; j < truth.cols(); ++j) out.push_back(ols_r2(truth.col(j), estimated));
  return out;
}

inline std::vector<McSlot> mc_slots(const McConfig& cfg) {
  std::vector<McSlot> slots;
  for (McMethod m : cfg.methods) {
    if (is_quantile_method(m)) {
      for (double tau : cfg.taus) slots.push_back({m, tau});
    } else {
      slots.push_back({m, std::nullopt});
    }
  }
  return slots;
}

inline McRecord run_slot(const McConfig& cfg, const McSlot& slot, const SimulatedPanel& sim,
                         std::optional<PanelSpectrum>& spectrum, const IqrConfig& iqr) {
  const PanelData& panel = sim.panel;
  const Eigen::MatrixXd& comps = sim.components.factors;
  const Eigen::Index n = panel.N();
  const Eigen::Index t = panel.T();
  auto spec_ref = [&]() -> const PanelSpectrum& {
    if (!spectrum) spectrum = compute_spectrum(panel.values());
    return *spectrum;
  };
  auto pca_r2 = [&](int r) {
    if (r < 1) return std::vector<double>(static_cast<std::size_t>(comps.cols()), 0.0);
    return r2_on(comps, pca_estimate(panel.values(), r, &spec_ref()).factors);
  };
  auto iqr_r2 = [&](double tau, int r) {
    if (r < 1) return std::vector<double>(static_cast<std::size_t>(comps.cols()), 0.0);
    return r2_on(comps, iqr_estimate(panel, tau, r, iqr).factors);
  };
  const int mean_r = cfg.known_r.value_or(sim.r_true_at(0.5));

  McRecord rec;
  switch (slot.method) {
    case McMethod::RankMin: {
      const FactorFit over = iqr_estimate(panel, *slot.tau, cfg.k, iqr);
      rec.r_hat = rank_min_from_fit(over).r_hat;
      if (cfg.refit_r2) rec.r2 = iqr_r2(*slot.tau, rec.r_hat);
      break;
    }
    case McMethod::IcQfa: {
      rec.r_hat = select_ic_qfa(panel, *slot.tau, cfg.k, cfg.ic_penalty, iqr).r_hat;
      if (cfg.refit_r2) rec.r2 = iqr_r2(*slot.tau, rec.r_hat);
      break;
    }
    case McMethod::PcP1:
      rec.r_hat = select_pc_p1(spec_ref(), n, t, cfg.k).r_hat;
      rec.r2 = pca_r2(rec.r_hat);
      break;
    case McMethod::IcP1:
      rec.r_hat = select_ic_p1(spec_ref(), n, t, cfg.k).r_hat;
      rec.r2 = pca_r2(rec.r_hat);
      break;
    case McMethod::EigenRatio:
      rec.r_hat = select_eigen_ratio(spec_ref().eigenvalues, cfg.k).r_hat;
      rec.r2 = pca_r2(rec.r_hat);
      break;
    case McMethod::QfaKnown: {
      rec.r_hat = cfg.known_r.value_or(sim.r_true_at(*slot.tau));
      rec.r2 = iqr_r2(*slot.tau, rec.r_hat);
      break;
    }
    case McMethod::PcaKnown:
      rec.r_hat = mean_r;
      rec.r2 = pca_r2(rec.r_hat);
      break;
    case McMethod::Sqr: {
      rec.r_hat = cfg.known_r.value_or(sim.r_true_at(*slot.tau));
      SqrConfig sc = cfg.sqr;
      sc.iqr = iqr;
      const SqrFit fit = sqr_estimate(panel, *slot.tau, rec.r_hat, sc);
      const Eigen::MatrixXd truth = sim.true_factors_at(*slot.tau);
      const SqrFit aligned = apply_alignment(fit, alignment_to_truth(fit.factors, truth));
      rec.r2 = r2_on(comps, aligned.factors);
      if (truth.cols() == aligned.factors.cols()) {
        rec.stat = standardized_factor_stat(aligned, truth, t / 2 - 1)(0);
      }
      break;
    }
  }
  return rec;
}

}  // namespace detail

/// Runs cfg.n_reps replications. Output is identical for any thread count:
/// replications write into per-index slots that are reduced in order.
inline McResult run_replications(const McConfig& cfg) {
  if (cfg.n_reps < 1) throw DomainError("run_replications: n_reps must be at least 1");
  if (cfg.methods.empty()) throw DomainError("run_replications: no methods requested");
  for (double tau : cfg.taus) detail::require_quantile(tau);
  resolved_params(cfg.spec);
  const auto slots = detail::mc_slots(cfg);
  const auto start = std::chrono::steady_clock::now();

  std::vector<std::vector<detail::McRecord>> records(static_cast<std::size_t>(cfg.n_reps));
  std::vector<int> r_true(slots.size(), 0);
  std::vector<Eigen::Index> n_components(1, 0);
  detail::parallel_for(cfg.n_reps, detail::resolve_threads(cfg.threads), [&](long rep, int) {
    const SimulatedPanel sim = generate(cfg.spec, static_cast<std::uint64_t>(rep));
    IqrConfig iqr = cfg.iqr;
    iqr.threads = 1;
    iqr.seed = detail::splitmix64(cfg.iqr.seed ^ detail::splitmix64(static_cast<std::uint64_t>(rep)));
    std::optional<PanelSpectrum> spectrum;
    auto& row = records[static_cast<std::size_t>(rep)];
    row.resize(slots.size());
    for (std::size_t s = 0; s < slots.size(); ++s) {
      try {
        row[s] = detail::run_slot(cfg, slots[s], sim, spectrum, iqr);
      } catch (const std::exception& e) {
        row[s].failed = true;
        row[s].error = e.what();
      }
    }
  });

  // Ground-truth counts do not depend on the replication.
  const SimulatedPanel probe = generate(cfg.spec, 0);
  McResult result;
  result.spec = cfg.spec;
  result.replications = cfg.n_reps;
  for (std::size_t s = 0; s < slots.size(); ++s) {
    McSummary sum;
    sum.method = to_string(slots[s].method);
    sum.tau = slots[s].tau;
    const bool known = slots[s].method == McMethod::QfaKnown || slots[s].method == McMethod::PcaKnown ||
                       slots[s].method == McMethod::Sqr;
    sum.r_true = known && cfg.known_r ? *cfg.known_r : probe.r_true_at(slots[s].tau.value_or(0.5));
    const std::size_t n_comp = static_cast<std::size_t>(probe.components.factors.cols());
    std::vector<double> r2_sum(n_comp, 0.0);
    int r2_count = 0;
    double r_sum = 0.0;
    std::array<int, 3> counts{0, 0, 0};
    for (int rep = 0; rep < cfg.n_reps; ++rep) {
      const auto& rec = records[static_cast<std::size_t>(rep)][s];
      if (rec.failed) {
        sum.failures.push_back({rep, rec.error});
        continue;
      }
      ++sum.n_ok;
      r_sum += rec.r_hat;
      counts[rec.r_hat < sum.r_true ? 0 : (rec.r_hat == sum.r_true ? 1 : 2)] += 1;
      if (!rec.r2.empty()) {
        ++r2_count;
        for (std::size_t j = 0; j < n_comp; ++j) r2_sum[j] += rec.r2[j];
      }
      if (std::isfinite(rec.stat)) sum.stats.push_back(rec.stat);
    }
    if (sum.n_ok > 0) {
      for (int c = 0; c < 3; ++c) sum.triple[static_cast<std::size_t>(c)] = static_cast<double>(counts[static_cast<std::size_t>(c)]) / sum.n_ok;
      sum.mean_r_hat = r_sum / sum.n_ok;
    }
    if (r2_count > 0) {
      for (double& v : r2_sum) v /= r2_count;
      sum.mean_r2 = std::move(r2_sum);
    }
    result.summaries.push_back(std::move(sum));
  }
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  for (const auto& sum : result.summaries) {
    if (static_cast<double>(sum.failures.size()) > 0.05 * cfg.n_reps) {
      throw ConvergenceError("Monte Carlo aborted: method " + sum.method + " failed in " +
                             std::to_string(sum.failures.size()) + " of " + std::to_string(cfg.n_reps) +
                             " replications (first error: " + sum.failures.front().error + ")");
    }
  }
  return result;
}

/// Named presets reproducing the simulation tables at desk scale:
/// table1..table6 and fig-sqr. Anything else raises SpecError.
inline McConfig experiment_config(const std::string& name) {
  McConfig cfg;
  cfg.spec.seed = 1;
  if (name == "table1" || name == "table2") {
    cfg.spec.name = DgpName::Table1Outliers;
    if (name == "table1") {
      cfg.spec.N = cfg.spec.T = 200;
      cfg.methods = {McMethod::RankMin, McMethod::PcP1, McMethod::IcP1, McMethod::EigenRatio};
      cfg.refit_r2 = false;
    } else {
      cfg.methods = {McMethod::QfaKnown, McMethod::PcaKnown};
    }
    return cfg;
  }
  if (name == "table3" || name == "table4" || name == "table5" || name == "table6") {
    const DgpName designs[] = {DgpName::Case1Indep, DgpName::Case2Student3, DgpName::Case3Serial,
                               DgpName::Case4SerialCross};
    cfg.spec.name = designs[name.back() - '3'];
    cfg.methods = {McMethod::RankMin};
    cfg.taus = {0.25, 0.5, 0.75};
    return cfg;
  }
  if (name == "fig-sqr" || name == "fig_sqr") {
    cfg.spec.name = DgpName::FigSqr;
    cfg.methods = {McMethod::Sqr};
    cfg.taus = {0.25};
    return cfg;
  }
  throw SpecError("unknown experiment '" + name + "' (expected table1..table6 or fig-sqr)");
}

inline Json to_json(const McResult& r, bool include_timing = false) {
  Json j;
  j["spec"] = to_json(r.spec);
  j["replications"] = r.replications;
  Json methods = Json::array();
  for (const auto& s : r.summaries) {
    Json m;
    m["method"] = s.method;
    m["tau"] = s.tau ? Json(*s.tau) : Json(nullptr);
    m["r_true"] = s.r_true;
    m["n_ok"] = s.n_ok;
    m["triple"] = s.triple;
    m["mean_r_hat"] = s.mean_r_hat;
    m["mean_r2"] = s.mean_r2;
    m["standardized_stats"] = s.stats;
    Json fails = Json::array();
    for (const auto& f : s.failures) fails.push_back({{"replication", f.replication}, {"error", f.error}});
    m["failures"] = std::move(fails);
    methods.push_back(std::move(m));
  }
  j["methods"] = std::move(methods);
  if (include_timing) j["wall_seconds"] = r.wall_seconds;
  return j;
}

enum class TableFormat { Text, Csv, JsonDoc };

/// "[0.00 1.00 0.00]"
inline std::string format_triple(const std::array<double, 3>& t) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "[%.2f %.2f %.2f]", t[0], t[1], t[2]);
  return buf;
}

inline std::string emit_table(const McResult& r, TableFormat format) {
  std::ostringstream out;
  if (format == TableFormat::JsonDoc) {
    out << to_json(r).dump(2) << '\n';
    return out.str();
  }
  std::size_t n_comp = 0;
  for (const auto& s : r.summaries) n_comp = std::max(n_comp, s.mean_r2.size());
  char buf[128];
  if (format == TableFormat::Csv) {
    out << "method,tau,r_true,n_ok,failures,p_under,p_equal,p_over,mean_r_hat";
    for (std::size_t j = 0; j < n_comp; ++j) out << ",r2_f" << j + 1;
    out << '\n';
    for (const auto& s : r.summaries) {
      out << s.method << ',' << (s.tau ? detail::format_double(*s.tau) : std::string()) << ',' << s.r_true << ','
          << s.n_ok << ',' << s.failures.size() << ',' << detail::format_double(s.triple[0]) << ','
          << detail::format_double(s.triple[1]) << ',' << detail::format_double(s.triple[2]) << ','
          << detail::format_double(s.mean_r_hat);
      for (std::size_t j = 0; j < n_comp; ++j) {
        out << ',' << (j < s.mean_r2.size() ? detail::format_double(s.mean_r2[j]) : std::string());
      }
      out << '\n';
    }
    return out.str();
  }
  out << "design " << to_string(r.spec.name) << "  N=" << r.spec.N << " T=" << r.spec.T
      << "  replications=" << r.replications << "  seed=" << r.spec.seed << '\n';
  std::snprintf(buf, sizeof buf, "%-12s %6s %3s  %-18s %7s", "method", "tau", "r", "[r<r0 r=r0 r>r0]", "mean_r");
  out << buf;
  for (std::size_t j = 0; j < n_comp; ++j) {
    std::snprintf(buf, sizeof buf, "  R2(f%zu)", j + 1);
    out << buf;
  }
  out << '\n';
  for (const auto& s : r.summaries) {
    const std::string tau = s.tau ? detail::format_double(*s.tau) : "-";
    std::snprintf(buf, sizeof buf, "%-12s %6s %3d  %-18s %7.2f", s.method.c_str(), tau.c_str(), s.r_true,
                  format_triple(s.triple).c_str(), s.mean_r_hat);
    out << buf;
    for (std::size_t j = 0; j < n_comp; ++j) {
      if (j < s.mean_r2.size()) {
        std::snprintf(buf, sizeof buf, "  %6.3f", s.mean_r2[j]);
      } else {
        std::snprintf(buf, sizeof buf, "  %6s", "-");
      }
      out << buf;
    }
    if (!s.failures.empty()) out << "  failures=" << s.failures.size();
    out << '\n';
    if (!s.stats.empty()) {
      double mean = 0.0;
      for (double v : s.stats) mean += v;
      mean /= static_cast<double>(s.stats.size());
      double var = 0.0;
      for (double v : s.stats) var += (v - mean) * (v - mean);
      var /= static_cast<double>(std::max<std::size_t>(1, s.stats.size() - 1));
      std::snprintf(buf, sizeof buf, "    standardized factor statistic: n=%zu mean=%.3f sd=%.3f\n", s.stats.size(),
                    mean, std::sqrt(var));
      out << buf;
    }
  }
  return out.str();
}

}  // namespace qfactor
