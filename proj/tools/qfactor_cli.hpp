#pragma once

// Command-line front end. run_cli() does all the work so tests can drive it
// in-process; main() only forwards argv.
//
// Exit codes: 0 success, 2 usage or input error, 3 numerical non-convergence.

#include "qfactor/qfactor.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace qfactor::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitConvergence = 3;

/// Input problem detected by the CLI itself (maps to exit 2).
class UsageError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw UsageError("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

/// defaults <- config file <- explicit flags
inline Json resolve(const Json& defaults, const std::string& config_path, const Json& flags) {
  Json out = defaults;
  if (!config_path.empty()) {
    const Json file = read_json_file(config_path);
    if (!file.is_object()) throw UsageError("config file must hold a JSON object");
    for (const auto& [key, value] : file.items()) {
      if (!out.contains(key)) throw UsageError("unknown config key '" + key + "'");
      out[key] = value;
    }
  }
  for (const auto& [key, value] : flags.items()) out[key] = value;
  return out;
}

template <typename T>
T get(const Json& cfg, const char* key) {
  try {
    return cfg.at(key).get<T>();
  } catch (const Json::exception&) {
    throw UsageError(std::string("config value '") + key + "' has the wrong type");
  }
}

/// Thread count: flag or config, else QFACTOR_THREADS, else every core.
inline int resolve_thread_count(const Json& cfg) {
  if (!cfg.at("threads").is_null()) {
    const int t = get<int>(cfg, "threads");
    if (t < 0) throw UsageError("--threads must be non-negative");
    return qfactor::detail::resolve_threads(t);
  }
  if (const char* env = std::getenv("QFACTOR_THREADS"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 0) throw UsageError("QFACTOR_THREADS must be a non-negative integer");
    return qfactor::detail::resolve_threads(static_cast<int>(v));
  }
  return qfactor::detail::resolve_threads(0);
}

/// Accepts a number or a list; returns sorted, deduplicated levels in (0,1).
inline std::vector<double> resolve_taus(const Json& value) {
  std::vector<double> taus;
  try {
    if (value.is_array()) {
      taus = value.get<std::vector<double>>();
    } else {
      taus.push_back(value.get<double>());
    }
  } catch (const Json::exception&) {
    throw UsageError("tau must be a number or a list of numbers");
  }
  if (taus.empty()) throw UsageError("at least one quantile level is required");
  for (double t : taus) {
    if (!(t > 0.0 && t < 1.0)) throw UsageError("quantile outside (0,1): " + qfactor::detail::format_double(t));
  }
  std::sort(taus.begin(), taus.end());
  taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
  return taus;
}

/// "auto" or a positive integer.
inline std::optional<int> resolve_r(const Json& value) {
  if (value.is_string()) {
    const std::string s = value.get<std::string>();
    if (s == "auto") return std::nullopt;
    try {
      std::size_t used = 0;
      const int r = std::stoi(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      if (r < 1) throw UsageError("r must be a positive integer or 'auto'");
      return r;
    } catch (const std::logic_error&) {
      throw UsageError("r must be a positive integer or 'auto', got '" + s + "'");
    }
  }
  if (value.is_number_integer() && value.get<int>() >= 1) return value.get<int>();
  throw UsageError("r must be a positive integer or 'auto'");
}

inline Layout resolve_layout(const std::string& text) {
  if (text == "time-by-unit" || text == "T_by_N") return Layout::TimeByUnit;
  if (text == "unit-by-time" || text == "N_by_T") return Layout::UnitByTime;
  throw UsageError("layout must be 'time-by-unit' or 'unit-by-time'");
}

inline PanelData load_input(const Json& cfg) {
  const std::string input = get<std::string>(cfg, "input");
  if (input.empty()) throw UsageError("--input is required");
  PanelData p = load_csv(input, resolve_layout(get<std::string>(cfg, "layout")));
  if (get<bool>(cfg, "standardize")) p = standardize(p);
  return p;
}

// Shortest round-trip form, so 0.3 tags as tau0p3.
inline std::string tau_tag(double tau) {
  std::array<char, 32> buf{};
  std::string s(buf.data(), std::to_chars(buf.data(), buf.data() + buf.size(), tau).ptr);
  std::replace(s.begin(), s.end(), '.', 'p');
  return "tau" + s;
}

inline void write_matrix_csv(const std::string& path, const Eigen::MatrixXd& m, const std::vector<std::string>& rows,
                             const char* corner, const char* prefix) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << corner;
  for (Eigen::Index j = 0; j < m.cols(); ++j) out << ',' << prefix << j + 1;
  out << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out << rows[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << ',' << qfactor::detail::format_double(m(i, j));
    out << '\n';
  }
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
}

inline std::filesystem::path output_dir(const Json& cfg) {
  std::filesystem::path dir(get<std::string>(cfg, "out"));
  if (dir.empty()) dir = ".";
  std::filesystem::create_directories(dir);
  return dir;
}

inline IqrConfig iqr_from(const Json& cfg, int threads) {
  IqrConfig iqr;
  iqr.seed = get<std::uint64_t>(cfg, "seed");
  iqr.restarts = get<int>(cfg, "restarts");
  iqr.max_iterations = get<int>(cfg, "max_iterations");
  iqr.rel_tol = get<double>(cfg, "rel_tol");
  iqr.threads = threads;
  if (iqr.restarts < 1 || iqr.max_iterations < 1 || !(iqr.rel_tol > 0.0)) {
    throw UsageError("restarts and max_iterations must be >= 1 and rel_tol positive");
  }
  return iqr;
}

inline Json iqr_defaults() {
  const IqrConfig d;
  return {{"seed", d.seed}, {"restarts", d.restarts}, {"max_iterations", d.max_iterations}, {"rel_tol", d.rel_tol}};
}

inline void log_config(std::ostream& err, const std::string& command, const Json& cfg) {
  err << "qfactor " << command << " config " << cfg.dump() << '\n';
}

// Registers a flag that, when present, writes its value into flags[key].
template <typename T>
CLI::Option* flag(CLI::App* app, Json& flags, const std::string& names, const std::string& key,
                  const std::string& help) {
  return app->add_option_function<T>(
      names, [&flags, key](const T& v) { flags[key] = v; }, help);
}

inline void switch_flag(CLI::App* app, Json& flags, const std::string& names, const std::string& key, bool value,
                        const std::string& help) {
  app->add_flag_callback(names, [&flags, key, value] { flags[key] = value; }, help);
}

inline void add_iqr_flags(CLI::App* app, Json& flags) {
  flag<std::uint64_t>(app, flags, "--seed", "seed", "seed for the random starting values");
  flag<int>(app, flags, "--restarts", "restarts", "random restarts per fit");
  flag<int>(app, flags, "--max-iter", "max_iterations", "iteration cap per restart");
  flag<double>(app, flags, "--rel-tol", "rel_tol", "relative objective change that stops the iteration");
  flag<int>(app, flags, "--threads", "threads", "worker threads (0 = all cores; env QFACTOR_THREADS)");
}

inline void add_input_flags(CLI::App* app, Json& flags, std::string& config) {
  flag<std::string>(app, flags, "-i,--input", "input", "panel CSV");
  flag<std::string>(app, flags, "--layout", "layout", "time-by-unit (rows are periods) or unit-by-time");
  switch_flag(app, flags, "--no-standardize", "standardize", false, "use the raw panel instead of z-scores");
  app->add_option("--config", config, "JSON file with defaults for any flag");
}

inline Json input_defaults() {
  Json d = iqr_defaults();
  d["input"] = "";
  d["layout"] = "time-by-unit";
  d["standardize"] = true;
  d["threads"] = nullptr;
  d["out"] = ".";
  return d;
}

// ---------------------------------------------------------------------------

inline int cmd_estimate(const Json& flags, const std::string& config, std::ostream& out, std::ostream& err) {
  Json defaults = input_defaults();
  defaults["tau"] = Json::array({0.5});
  defaults["r"] = "auto";
  defaults["k"] = 8;
  defaults["prefix"] = "fit";
  const Json cfg = resolve(defaults, config, flags);
  const std::vector<double> taus = resolve_taus(cfg.at("tau"));
  const std::optional<int> fixed_r = resolve_r(cfg.at("r"));
  const int k = get<int>(cfg, "k");
  if (k < 1) throw UsageError("k must be at least 1");
  const int threads = resolve_thread_count(cfg);
  log_config(err, "estimate", cfg);

  const PanelData panel = load_input(cfg);
  const IqrConfig iqr = iqr_from(cfg, threads);
  const auto dir = output_dir(cfg);
  const std::string prefix = get<std::string>(cfg, "prefix");
  bool all_converged = true;
  for (double tau : taus) {
    Json doc;
    int r = 0;
    if (fixed_r) {
      r = *fixed_r;
    } else {
      const SelectionResult sel = select_rank_min(panel, tau, k, iqr);
      r = sel.r_hat;
      doc["selection"] = to_json(sel);
    }
    const FactorFit fit = iqr_estimate(panel, tau, r, iqr);
    all_converged = all_converged && fit.converged;
    Json fit_json = to_json(fit);
    for (const auto& [key, value] : fit_json.items()) doc[key] = value;
    doc["unit_ids"] = panel.unit_ids();
    doc["time_ids"] = panel.time_ids();
    doc["standardized"] = panel.standardized();

    const std::string stem = prefix + "_" + tau_tag(tau);
    write_text((dir / (stem + ".json")).string(), doc.dump(2) + "\n");
    write_matrix_csv((dir / (stem + "_factors.csv")).string(), fit.factors, panel.time_ids(), "time", "f");
    write_matrix_csv((dir / (stem + "_loadings.csv")).string(), fit.loadings, panel.unit_ids(), "unit", "l");
    out << "tau=" << qfactor::detail::format_double(tau) << " r=" << r
        << " objective=" << qfactor::detail::format_double(fit.objective) << " iterations=" << fit.iterations
        << " converged=" << (fit.converged ? "yes" : "no") << " -> " << (dir / (stem + ".json")).string() << '\n';
    for (const auto& w : fit.warnings) err << "warning: " << w << '\n';
  }
  if (!all_converged) {
    err << "error: at least one fit did not converge (artifacts were written with converged=false)\n";
    return kExitConvergence;
  }
  return kExitOk;
}

inline std::vector<SelectionMethod> resolve_selection_methods(const std::string& text) {
  if (text == "all") {
    return {SelectionMethod::RankMin, SelectionMethod::IcQfa, SelectionMethod::PcP1, SelectionMethod::IcP1,
            SelectionMethod::EigenRatio};
  }
  std::vector<SelectionMethod> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "rank" || item == "rank_min") {
      out.push_back(SelectionMethod::RankMin);
    } else if (item == "ic" || item == "ic_qfa") {
      out.push_back(SelectionMethod::IcQfa);
    } else if (item == "pcp1" || item == "pc_p1") {
      out.push_back(SelectionMethod::PcP1);
    } else if (item == "icp1" || item == "ic_p1") {
      out.push_back(SelectionMethod::IcP1);
    } else if (item == "er" || item == "eigen_ratio") {
      out.push_back(SelectionMethod::EigenRatio);
    } else {
      throw UsageError("unknown selection method '" + item + "' (rank, ic, pcp1, icp1, er or all)");
    }
  }
  if (out.empty()) throw UsageError("no selection method given");
  return out;
}

inline IcPenalty resolve_penalty(const std::string& text) {
  IcPenalty p;
  if (text == "rank-scale") return p;
  if (text == "ando-bai") {
    p.kind = IcPenalty::Kind::AndoBai;
    return p;
  }
  double v = 0.0;
  if (!qfactor::detail::parse_number(text, v) || !(v > 0.0)) {
    throw UsageError("penalty must be 'rank-scale', 'ando-bai' or a positive number");
  }
  p.kind = IcPenalty::Kind::Fixed;
  p.value = v;
  return p;
}

inline int cmd_select(const Json& flags, const std::string& config, std::ostream& out, std::ostream& err) {
  Json defaults = input_defaults();
  defaults["out"] = "";
  defaults["method"] = "rank";
  defaults["tau"] = Json::array({0.5});
  defaults["k"] = 8;
  defaults["penalty"] = "rank-scale";
  const Json cfg = resolve(defaults, config, flags);
  const auto methods = resolve_selection_methods(get<std::string>(cfg, "method"));
  const std::vector<double> taus = resolve_taus(cfg.at("tau"));
  const int k = get<int>(cfg, "k");
  if (k < 1) throw UsageError("k must be at least 1");
  const IcPenalty penalty = resolve_penalty(get<std::string>(cfg, "penalty"));
  const int threads = resolve_thread_count(cfg);
  log_config(err, "select", cfg);

  const PanelData panel = load_input(cfg);
  if (k > std::min(panel.N(), panel.T())) throw UsageError("k exceeds min(N, T)");
  const IqrConfig iqr = iqr_from(cfg, threads);
  std::optional<PanelSpectrum> spectrum;
  auto spec = [&]() -> const PanelSpectrum& {
    if (!spectrum) spectrum = compute_spectrum(panel.values());
    return *spectrum;
  };

  Json results = Json::array();
  auto report = [&](const SelectionResult& s) {
    out << to_string(s.method);
    if (s.tau) out << " tau=" << qfactor::detail::format_double(*s.tau);
    out << " r_hat=" << s.r_hat << '\n';
    results.push_back(to_json(s));
  };
  for (SelectionMethod m : methods) {
    switch (m) {
      case SelectionMethod::RankMin:
        for (double tau : taus) report(select_rank_min(panel, tau, k, iqr));
        break;
      case SelectionMethod::IcQfa:
        for (double tau : taus) report(select_ic_qfa(panel, tau, k, penalty, iqr));
        break;
      case SelectionMethod::PcP1:
        report(select_pc_p1(spec(), panel.N(), panel.T(), k));
        break;
      case SelectionMethod::IcP1:
        report(select_ic_p1(spec(), panel.N(), panel.T(), k));
        break;
      case SelectionMethod::EigenRatio:
        report(select_eigen_ratio(spec().eigenvalues, k));
        break;
    }
  }
  const std::string path = get<std::string>(cfg, "out");
  if (!path.empty()) write_text(path, results.dump(2) + "\n");
  return kExitOk;
}

inline int cmd_sqr(const Json& flags, const std::string& config, std::ostream& out, std::ostream& err) {
  const SqrConfig sd;
  Json defaults = input_defaults();
  defaults["tau"] = Json::array({0.5});
  defaults["r"] = "auto";
  defaults["k"] = 8;
  defaults["h"] = nullptr;
  defaults["b"] = nullptr;
  defaults["h_scale"] = sd.h_scale;
  defaults["b_scale"] = sd.b_scale;
  defaults["covariances"] = true;
  defaults["prefix"] = "sqr";
  const Json cfg = resolve(defaults, config, flags);
  const std::vector<double> taus = resolve_taus(cfg.at("tau"));
  const std::optional<int> fixed_r = resolve_r(cfg.at("r"));
  const int k = get<int>(cfg, "k");
  if (k < 1) throw UsageError("k must be at least 1");
  const int threads = resolve_thread_count(cfg);
  log_config(err, "sqr", cfg);

  const PanelData panel = load_input(cfg);
  SqrConfig sc;
  sc.iqr = iqr_from(cfg, threads);
  if (!cfg.at("h").is_null()) sc.h = get<double>(cfg, "h");
  if (!cfg.at("b").is_null()) sc.b = get<double>(cfg, "b");
  sc.h_scale = get<double>(cfg, "h_scale");
  sc.b_scale = get<double>(cfg, "b_scale");
  sc.covariances = get<bool>(cfg, "covariances");
  const auto dir = output_dir(cfg);
  const std::string prefix = get<std::string>(cfg, "prefix");
  bool all_converged = true;
  for (double tau : taus) {
    const int r = fixed_r ? *fixed_r : select_rank_min(panel, tau, k, sc.iqr).r_hat;
    const SqrFit fit = sqr_estimate(panel, tau, r, sc);
    all_converged = all_converged && fit.converged;
    const std::string stem = prefix + "_" + tau_tag(tau);
    write_text((dir / (stem + ".json")).string(), to_json(fit).dump(2) + "\n");
    if (sc.covariances) {
      // point +/- 1.96 sqrt(diag(V) / N)
      const double root_n = std::sqrt(static_cast<double>(panel.N()));
      Eigen::MatrixXd bands(panel.T(), 3 * r);
      for (Eigen::Index t = 0; t < panel.T(); ++t) {
        const Eigen::MatrixXd& v = fit.factor_cov[static_cast<std::size_t>(t)];
        for (int j = 0; j < r; ++j) {
          const double half = 1.96 * std::sqrt(std::max(0.0, v(j, j))) / root_n;
          bands(t, 3 * j) = fit.factors(t, j);
          bands(t, 3 * j + 1) = fit.factors(t, j) - half;
          bands(t, 3 * j + 2) = fit.factors(t, j) + half;
        }
      }
      std::ofstream csv(dir / (stem + "_factor_bands.csv"));
      if (!csv) throw Error("cannot write factor bands");
      csv << "time";
      for (int j = 1; j <= r; ++j) csv << ",f" << j << ",f" << j << "_lo,f" << j << "_hi";
      csv << '\n';
      for (Eigen::Index t = 0; t < panel.T(); ++t) {
        csv << panel.time_ids()[static_cast<std::size_t>(t)];
        for (Eigen::Index c = 0; c < bands.cols(); ++c) csv << ',' << qfactor::detail::format_double(bands(t, c));
        csv << '\n';
      }
    }
    out << "tau=" << qfactor::detail::format_double(tau) << " r=" << r << " h=" << qfactor::detail::format_double(fit.h_used)
        << " smoothed_objective=" << qfactor::detail::format_double(fit.objective)
        << " converged=" << (fit.converged ? "yes" : "no") << '\n';
    for (const auto& w : fit.warnings) err << "warning: " << w << '\n';
  }
  return all_converged ? kExitOk : kExitConvergence;
}

/// "100x200" -> N=100, T=200
inline std::pair<int, int> parse_size(const std::string& text) {
  const auto x = text.find_first_of("xX");
  if (x == std::string::npos) throw UsageError("--size must look like NxT, e.g. 100x100");
  try {
    std::size_t a = 0;
    std::size_t b = 0;
    const int n = std::stoi(text.substr(0, x), &a);
    const int t = std::stoi(text.substr(x + 1), &b);
    if (a != x || b != text.size() - x - 1 || n < 2 || t < 2) throw std::invalid_argument(text);
    return {n, t};
  } catch (const std::logic_error&) {
    throw UsageError("--size must look like NxT with N, T >= 2, got '" + text + "'");
  }
}

inline std::vector<McMethod> parse_methods(const Json& value) {
  std::vector<std::string> names;
  if (value.is_string()) {
    std::stringstream ss(value.get<std::string>());
    std::string item;
    while (std::getline(ss, item, ',')) names.push_back(item);
  } else {
    names = value.get<std::vector<std::string>>();
  }
  std::vector<McMethod> out;
  for (const auto& n : names) out.push_back(parse_mc_method(n));
  if (out.empty()) throw UsageError("no Monte Carlo methods given");
  return out;
}

inline DgpSpec spec_from_argument(const std::string& text) {
  Json j;
  try {
    j = !text.empty() && text.front() == '{' ? Json::parse(text) : read_json_file(text);
  } catch (const Json::exception& e) {
    throw UsageError(std::string("--spec is not valid JSON: ") + e.what());
  }
  return dgp_spec_from_json(j.contains("dgp") ? j.at("dgp") : j);
}

inline int cmd_simulate(const Json& flags, const std::string& config, std::ostream& out, std::ostream& err) {
  Json defaults = iqr_defaults();
  defaults["experiment"] = nullptr;
  defaults["spec"] = nullptr;
  defaults["n"] = 100;
  defaults["size"] = nullptr;
  defaults["seed"] = 1;
  defaults["iqr_seed"] = IqrConfig{}.seed;
  defaults["tau"] = nullptr;
  defaults["methods"] = nullptr;
  defaults["k"] = 8;
  defaults["known_r"] = nullptr;
  defaults["r2"] = nullptr;
  defaults["threads"] = nullptr;
  defaults["out"] = "";
  defaults["format"] = "text";
  Json cfg = resolve(defaults, config, flags);

  McConfig mc;
  const bool has_exp = !cfg.at("experiment").is_null();
  const bool has_spec = !cfg.at("spec").is_null();
  if (has_exp == has_spec) throw UsageError("give exactly one of --experiment or --spec");
  if (has_exp) {
    try {
      mc = experiment_config(get<std::string>(cfg, "experiment"));
    } catch (const SpecError& e) {
      throw UsageError(e.what());
    }
  } else {
    mc.spec = spec_from_argument(get<std::string>(cfg, "spec"));
    if (cfg.at("methods").is_null()) throw UsageError("--spec needs --methods");
  }
  if (!cfg.at("size").is_null()) std::tie(mc.spec.N, mc.spec.T) = parse_size(get<std::string>(cfg, "size"));
  mc.spec.seed = get<std::uint64_t>(cfg, "seed");
  mc.n_reps = get<int>(cfg, "n");
  if (mc.n_reps < 1) throw UsageError("--n must be at least 1");
  if (!cfg.at("tau").is_null()) mc.taus = resolve_taus(cfg.at("tau"));
  if (!cfg.at("methods").is_null()) mc.methods = parse_methods(cfg.at("methods"));
  mc.k = get<int>(cfg, "k");
  if (mc.k < 1) throw UsageError("k must be at least 1");
  if (!cfg.at("known_r").is_null()) mc.known_r = get<int>(cfg, "known_r");
  if (!cfg.at("r2").is_null()) mc.refit_r2 = get<bool>(cfg, "r2");
  mc.iqr = iqr_from(cfg, 1);
  mc.iqr.seed = get<std::uint64_t>(cfg, "iqr_seed");
  mc.threads = resolve_thread_count(cfg);
  const std::string format = get<std::string>(cfg, "format");
  TableFormat tf = TableFormat::Text;
  if (format == "csv") {
    tf = TableFormat::Csv;
  } else if (format == "json") {
    tf = TableFormat::JsonDoc;
  } else if (format != "text") {
    throw UsageError("--format must be text, csv or json");
  }
  resolved_params(mc.spec);

  // Log what actually runs, with experiment presets expanded.
  cfg["spec"] = to_json(mc.spec);
  cfg["tau"] = mc.taus;
  Json names = Json::array();
  for (McMethod m : mc.methods) names.push_back(to_string(m));
  cfg["methods"] = names;
  cfg["r2"] = mc.refit_r2;
  cfg["threads"] = mc.threads;
  log_config(err, "simulate", cfg);

  const McResult result = run_replications(mc);
  const std::string doc = emit_table(result, tf);
  const std::string path = get<std::string>(cfg, "out");
  if (path.empty()) {
    out << doc;
  } else {
    write_text(path, doc);
    out << emit_table(result, TableFormat::Text);
  }
  err << "simulate finished in " << qfactor::detail::format_double(result.wall_seconds) << " s\n";
  return kExitOk;
}

inline int cmd_generate(const Json& flags, std::ostream& out, std::ostream& err) {
  const Json defaults = {{"dgp", "case1_indep"}, {"size", "100x100"}, {"seed", 1},           {"replication", 0},
                         {"params", Json::object()}, {"out", ""},     {"layout", "time-by-unit"}};
  Json cfg = resolve(defaults, "", flags);
  DgpSpec spec;
  try {
    spec.name = parse_dgp_name(get<std::string>(cfg, "dgp"));
  } catch (const SpecError& e) {
    throw UsageError(e.what());
  }
  std::tie(spec.N, spec.T) = parse_size(get<std::string>(cfg, "size"));
  spec.seed = get<std::uint64_t>(cfg, "seed");
  for (const auto& [key, value] : cfg.at("params").items()) spec.params[key] = value.get<double>();
  log_config(err, "generate", cfg);
  const SimulatedPanel sim = generate(spec, get<std::uint64_t>(cfg, "replication"));
  const Layout layout = resolve_layout(get<std::string>(cfg, "layout"));
  const std::string path = get<std::string>(cfg, "out");
  if (path.empty()) {
    write_csv(out, sim.panel, layout);
  } else {
    save_csv(sim.panel, path, layout);
  }
  return kExitOk;
}

}  // namespace detail

/// args excludes the program name.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Quantile factor analysis: estimation, factor-number selection, smoothed QR and simulations",
               "qfactor"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "qfactor 1.0.0");

  Json est_flags = Json::object();
  Json sel_flags = Json::object();
  Json sqr_flags = Json::object();
  Json sim_flags = Json::object();
  Json gen_flags = Json::object();
  std::string est_config;
  std::string sel_config;
  std::string sqr_config;
  std::string sim_config;
  using detail::flag;

  auto* est = app.add_subcommand("estimate", "fit quantile factors at one or more quantile levels");
  detail::add_input_flags(est, est_flags, est_config);
  detail::add_iqr_flags(est, est_flags);
  flag<std::vector<double>>(est, est_flags, "--tau", "tau", "quantile levels, comma separated")->delimiter(',');
  flag<std::string>(est, est_flags, "--r", "r", "number of factors or 'auto' (rank minimization)");
  flag<int>(est, est_flags, "--k", "k", "upper bound on the number of factors for --r auto");
  flag<std::string>(est, est_flags, "-o,--out", "out", "output directory");
  flag<std::string>(est, est_flags, "--prefix", "prefix", "file name prefix");

  auto* sel = app.add_subcommand("select", "estimate the number of factors");
  detail::add_input_flags(sel, sel_flags, sel_config);
  detail::add_iqr_flags(sel, sel_flags);
  flag<std::string>(sel, sel_flags, "-m,--method", "method", "rank, ic, pcp1, icp1, er (comma separated) or all");
  flag<std::vector<double>>(sel, sel_flags, "--tau", "tau", "quantile levels for rank and ic")->delimiter(',');
  flag<int>(sel, sel_flags, "--k", "k", "largest number of factors considered");
  flag<std::string>(sel, sel_flags, "--penalty", "penalty", "ic penalty: rank-scale, ando-bai or a number");
  flag<std::string>(sel, sel_flags, "-o,--out", "out", "write the results as JSON to this file");

  auto* sqr = app.add_subcommand("sqr", "smoothed quantile factor estimation with confidence bands");
  sqr->alias("smooth-estimate");
  detail::add_input_flags(sqr, sqr_flags, sqr_config);
  detail::add_iqr_flags(sqr, sqr_flags);
  flag<std::vector<double>>(sqr, sqr_flags, "--tau", "tau", "quantile levels, comma separated")->delimiter(',');
  flag<std::string>(sqr, sqr_flags, "--r", "r", "number of factors or 'auto'");
  flag<int>(sqr, sqr_flags, "--k", "k", "upper bound on the number of factors for --r auto");
  flag<double>(sqr, sqr_flags, "--bandwidth", "h", "smoothing bandwidth h (default T^(-1/7))");
  flag<double>(sqr, sqr_flags, "--density-bandwidth", "b", "density bandwidth b (default N^(-1/5))");
  flag<double>(sqr, sqr_flags, "--h-scale", "h_scale", "multiplier of the default h");
  flag<double>(sqr, sqr_flags, "--b-scale", "b_scale", "multiplier of the default b");
  detail::switch_flag(sqr, sqr_flags, "--no-covariances", "covariances", false, "skip covariances and bands");
  flag<std::string>(sqr, sqr_flags, "-o,--out", "out", "output directory");
  flag<std::string>(sqr, sqr_flags, "--prefix", "prefix", "file name prefix");

  auto* sim = app.add_subcommand("simulate", "run a Monte Carlo experiment");
  flag<std::string>(sim, sim_flags, "-e,--experiment", "experiment", "table1..table6 or fig-sqr");
  flag<std::string>(sim, sim_flags, "--spec", "spec", "DGP spec as a JSON file or inline JSON");
  flag<int>(sim, sim_flags, "-n,--n", "n", "number of replications");
  flag<std::string>(sim, sim_flags, "--size", "size", "panel size NxT");
  flag<std::uint64_t>(sim, sim_flags, "--seed", "seed", "master seed of the simulated panels");
  flag<std::uint64_t>(sim, sim_flags, "--iqr-seed", "iqr_seed", "seed of the estimator's random starts");
  flag<std::vector<double>>(sim, sim_flags, "--tau", "tau", "quantile levels")->delimiter(',');
  flag<std::string>(sim, sim_flags, "--methods", "methods",
                    "rank_min, ic_qfa, pc_p1, ic_p1, eigen_ratio, qfa_known, pca_known, sqr");
  flag<int>(sim, sim_flags, "--k", "k", "largest number of factors for selection methods");
  flag<int>(sim, sim_flags, "--known-r", "known_r", "factor count for the *_known and sqr methods");
  detail::switch_flag(sim, sim_flags, "--no-r2", "r2", false, "skip the refit used for R2 of selected factors");
  detail::switch_flag(sim, sim_flags, "--r2", "r2", true, "refit r-hat factors to report R2");
  flag<int>(sim, sim_flags, "--restarts", "restarts", "random restarts per fit");
  flag<int>(sim, sim_flags, "--max-iter", "max_iterations", "iteration cap per restart");
  flag<double>(sim, sim_flags, "--rel-tol", "rel_tol", "relative objective change that stops the iteration");
  flag<int>(sim, sim_flags, "--threads", "threads", "parallel replications (0 = all cores; env QFACTOR_THREADS)");
  flag<std::string>(sim, sim_flags, "-o,--out", "out", "write the table to this file");
  flag<std::string>(sim, sim_flags, "--format", "format", "text, csv or json");
  sim->add_option("--config", sim_config, "JSON file with defaults for any flag");

  auto* gen = app.add_subcommand("generate", "write one simulated panel as CSV");
  flag<std::string>(gen, gen_flags, "--dgp", "dgp", "design name, e.g. case1_indep");
  flag<std::string>(gen, gen_flags, "--size", "size", "panel size NxT");
  flag<std::uint64_t>(gen, gen_flags, "--seed", "seed", "master seed");
  flag<std::uint64_t>(gen, gen_flags, "--replication", "replication", "replication index");
  flag<std::string>(gen, gen_flags, "--layout", "layout", "time-by-unit or unit-by-time");
  flag<std::string>(gen, gen_flags, "-o,--out", "out", "CSV path (stdout when omitted)");
  gen->add_option_function<std::vector<std::string>>(
      "--param",
      [&gen_flags](const std::vector<std::string>& items) {
        Json params = Json::object();
        for (const auto& kv : items) {
          const auto eq = kv.find('=');
          double v = 0.0;
          if (eq == std::string::npos || !qfactor::detail::parse_number(kv.substr(eq + 1), v)) {
            throw CLI::ValidationError("--param", "expected key=value, got '" + kv + "'");
          }
          params[kv.substr(0, eq)] = v;
        }
        gen_flags["params"] = params;
      },
      "DGP parameter override key=value (repeatable)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (est->parsed()) return detail::cmd_estimate(est_flags, est_config, out, err);
    if (sel->parsed()) return detail::cmd_select(sel_flags, sel_config, out, err);
    if (sqr->parsed()) return detail::cmd_sqr(sqr_flags, sqr_config, out, err);
    if (sim->parsed()) return detail::cmd_simulate(sim_flags, sim_config, out, err);
    if (gen->parsed()) return detail::cmd_generate(gen_flags, out, err);
  } catch (const ConvergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConvergence;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace qfactor::cli
