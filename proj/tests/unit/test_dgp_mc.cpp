#include "oracles.hpp"

#include "qfactor/dgp.hpp"
#include "qfactor/mc.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

using namespace qfactor;
using Catch::Approx;

TEST_CASE("rng streams", "[dgp][rng]") {
  RngStream a = rng_stream(5, 0);
  RngStream b = rng_stream(5, 0);
  RngStream c = rng_stream(5, 1);
  bool differs = false;
  for (int k = 0; k < 100; ++k) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs = differs || x != c.next_u64();
  }
  CHECK(differs);

  RngStream g = rng_stream(42, 3);
  const int n = 1000000;
  double sum = 0.0;
  double sq = 0.0;
  for (int k = 0; k < n; ++k) {
    const double z = g.normal();
    sum += z;
    sq += z * z;
  }
  const double mean = sum / n;
  CHECK(std::abs(mean) < 0.004);
  CHECK(std::abs(sq / n - mean * mean - 1.0) < 0.006);
}

TEST_CASE("generate is deterministic per (seed, replication)", "[dgp]") {
  DgpSpec spec;
  spec.N = 30;
  spec.T = 20;
  const SimulatedPanel a = generate(spec, 2);
  const SimulatedPanel b = generate(spec, 2);
  const SimulatedPanel c = generate(spec, 3);
  CHECK(a.panel.values() == b.panel.values());
  CHECK(a.panel.values() != c.panel.values());
  spec.seed = 2;
  CHECK(generate(spec, 2).panel.values() != a.panel.values());
}

TEST_CASE("panels are rebuilt exactly from their components", "[dgp][invariant]") {
  DgpSpec spec;
  spec.N = 25;
  spec.T = 15;
  for (DgpName name : {DgpName::Case1Indep, DgpName::Case4SerialCross}) {
    spec.name = name;
    const SimulatedPanel sim = generate(spec, 1);
    const auto& c = sim.components;
    for (Eigen::Index t = 0; t < spec.T; ++t) {
      for (Eigen::Index i = 0; i < spec.N; ++i) {
        const double x = c.loadings(i, 0) * c.factors(t, 0) + c.loadings(i, 1) * c.factors(t, 1) +
                         c.loadings(i, 2) * c.factors(t, 2) * c.errors(t, i);
        CHECK(sim.panel.values()(t, i) == Approx(x).margin(1e-12));
      }
    }
  }
  spec.name = DgpName::Table1Outliers;
  const SimulatedPanel sim = generate(spec, 1);
  const Eigen::MatrixXd x = sim.components.factors * sim.components.loadings.transpose() + sim.components.errors;
  CHECK((sim.panel.values() - x).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("true factor counts by quantile", "[dgp]") {
  DgpSpec spec;
  spec.N = spec.T = 20;
  for (DgpName name : {DgpName::Case1Indep, DgpName::Case2Student3, DgpName::Case3Serial, DgpName::Case4SerialCross}) {
    spec.name = name;
    const SimulatedPanel sim = generate(spec, 0);
    CHECK(sim.r_true_at(0.5) == 2);
    CHECK(sim.r_true_at(0.25) == 3);
    CHECK(sim.r_true_at(0.75) == 3);
    CHECK(sim.r_true_at(0.5) <= sim.r_true_at(0.1));
    CHECK(sim.true_factors_at(0.25).cols() == sim.true_loadings_at(0.25).cols());
  }
  spec.name = DgpName::Case1Indep;
  const SimulatedPanel sim = generate(spec, 0);
  const Eigen::MatrixXd lq = sim.true_loadings_at(0.25);
  const double q = normal_quantile(0.25);
  for (Eigen::Index i = 0; i < spec.N; ++i) {
    CHECK(lq(i, 0) == sim.components.loadings(i, 0));
    CHECK(lq(i, 2) == Approx(sim.components.loadings(i, 2) * q).epsilon(1e-12));
  }
}

TEST_CASE("contamination share of the outlier design", "[dgp]") {
  DgpSpec spec;
  spec.name = DgpName::Table1Outliers;
  spec.N = spec.T = 200;
  for (std::uint64_t rep = 0; rep < 3; ++rep) {
    const double share = static_cast<double>(generate(spec, rep).components.cauchy_draws) / (200.0 * 200.0);
    CHECK(share == Approx(0.02).margin(0.005));
  }
}

TEST_CASE("Example 2 conditional quantile matches its closed form", "[dgp]") {
  DgpSpec spec;
  spec.name = DgpName::Example2;
  spec.N = 5;
  spec.T = 4;
  const SimulatedPanel sim = generate(spec, 0);
  const auto& c = sim.components;
  RngStream rng = rng_stream(99, 0);
  const int draws = 100000;
  for (double tau : {0.25, 0.75}) {
    const Eigen::MatrixXd lq = sim.true_loadings_at(tau);
    const Eigen::MatrixXd fq = sim.true_factors_at(tau);
    for (Eigen::Index i = 0; i < 2; ++i) {
      for (Eigen::Index t = 0; t < 2; ++t) {
        const double f = c.factors(t, 0);
        CHECK(c.loadings(i, 1) * f > 0.0);
        std::vector<double> x(draws);
        for (double& v : x) v = (c.loadings(i, 0) + c.loadings(i, 1) * rng.normal()) * f;
        const auto k = static_cast<std::size_t>(tau * draws);
        std::nth_element(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(k), x.end());
        // Quantile standard error at 1e5 draws is about 0.0043 * eta * f.
        const double tol = 5.0 * 0.0043 * c.loadings(i, 1) * f;
        CHECK(x[k] == Approx(lq(i, 0) * fq(t, 0)).margin(tol));
      }
    }
  }
}

TEST_CASE("DGP spec validation", "[dgp]") {
  DgpSpec spec;
  spec.params["beta"] = 1.0;
  CHECK_THROWS_AS(generate(spec), SpecError);
  spec.params = {{"J", 1.5}};
  CHECK_THROWS_AS(generate(spec), SpecError);
  spec.params = {{"nonsense", 1.0}};
  CHECK_THROWS_AS(generate(spec), SpecError);
  spec.params.clear();
  spec.N = 1;
  CHECK_THROWS_AS(generate(spec), SpecError);
  CHECK_THROWS_AS(parse_dgp_name("case9"), SpecError);
  for (const auto& [value, text] : dgp_names()) CHECK(parse_dgp_name(text) == value);
}

TEST_CASE("alignment to truth", "[mc][align]") {
  std::mt19937_64 gen(17);
  const Eigen::MatrixXd truth = oracle::gaussian(80, 2, gen);
  SECTION("identity and negation") {
    const Alignment id = alignment_to_truth(truth, truth);
    CHECK(id.order == std::vector<Eigen::Index>{0, 1});
    CHECK(id.sign == std::vector<double>{1.0, 1.0});
    const Alignment neg = alignment_to_truth(-truth, truth);
    CHECK(neg.sign == std::vector<double>{-1.0, -1.0});
  }
  SECTION("greedy matching agrees with exhaustive search") {
    std::uniform_real_distribution<double> angle(0.0, 6.283185307179586);
    for (int k = 0; k < 50; ++k) {
      const double a = angle(gen);
      Eigen::Matrix2d rot;
      rot << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
      Eigen::MatrixXd est = truth * rot + 0.05 * oracle::gaussian(80, 2, gen);
      // Skip near-45-degree rotations where both assignments tie.
      if (std::abs(std::abs(std::cos(a)) - std::abs(std::sin(a))) < 0.2) continue;
      const Alignment al = alignment_to_truth(est, truth);
      const std::vector<int> best = oracle::best_permutation(est, truth);
      CHECK(al.order[0] == best[0]);
      CHECK(al.order[1] == best[1]);
    }
  }
}

TEST_CASE("triple formatting and table emission", "[mc][table]") {
  CHECK(format_triple({0.0, 1.0, 0.0}) == "[0.00 1.00 0.00]");

  McConfig cfg;
  cfg.spec.name = DgpName::Case1Indep;
  cfg.spec.N = cfg.spec.T = 30;
  cfg.methods = {McMethod::RankMin, McMethod::PcP1, McMethod::QfaKnown, McMethod::PcaKnown};
  cfg.taus = {0.5};
  cfg.n_reps = 3;
  cfg.k = 4;
  const McResult r = run_replications(cfg);
  REQUIRE(r.summaries.size() == 4);
  for (const auto& s : r.summaries) {
    CHECK(s.triple[0] + s.triple[1] + s.triple[2] == Approx(1.0).margin(1e-12));
    for (double v : s.mean_r2) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
    CHECK(s.n_ok == 3);
  }

  const std::string text = emit_table(r, TableFormat::Text);
  CHECK(text.find("case1_indep") != std::string::npos);
  CHECK(text.find("rank_min") != std::string::npos);

  // CSV: one header plus one row per summary, numeric cells parse back exactly.
  std::istringstream csv(emit_table(r, TableFormat::Csv));
  std::string line;
  std::getline(csv, line);
  CHECK(line.rfind("method,tau,r_true,n_ok,failures,p_under,p_equal,p_over,mean_r_hat", 0) == 0);
  for (const auto& s : r.summaries) {
    REQUIRE(std::getline(csv, line));
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    CHECK(cells[0] == s.method);
    CHECK(std::stod(cells[6]) == s.triple[1]);
    CHECK(std::stod(cells[8]) == s.mean_r_hat);
  }

  const Json j = Json::parse(emit_table(r, TableFormat::JsonDoc));
  CHECK(j.at("replications") == 3);
  CHECK(j.at("spec").at("name") == "case1_indep");
  CHECK_FALSE(j.contains("wall_seconds"));
  for (const auto& m : j.at("methods")) {
    for (const char* key :
         {"method", "tau", "r_true", "n_ok", "triple", "mean_r_hat", "mean_r2", "standardized_stats", "failures"}) {
      CHECK(m.contains(key));
    }
    CHECK(m.at("triple").size() == 3);
  }
}

TEST_CASE("replications do not depend on the thread count", "[mc][determinism]") {
  McConfig cfg = experiment_config("table3");
  cfg.spec.N = cfg.spec.T = 30;
  cfg.n_reps = 4;
  cfg.k = 4;
  cfg.taus = {0.25};
  cfg.threads = 1;
  const std::string one = to_json(run_replications(cfg)).dump();
  cfg.threads = 3;
  CHECK(to_json(run_replications(cfg)).dump() == one);
}

TEST_CASE("experiment presets", "[mc]") {
  CHECK(experiment_config("table1").spec.N == 200);
  CHECK(experiment_config("table2").methods.size() == 2);
  CHECK(experiment_config("table6").spec.name == DgpName::Case4SerialCross);
  CHECK(experiment_config("fig-sqr").methods.front() == McMethod::Sqr);
  CHECK_THROWS_AS(experiment_config("table9"), SpecError);
  CHECK_THROWS_AS(parse_mc_method("magic"), SpecError);
}
