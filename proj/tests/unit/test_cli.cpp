#include "qfactor_cli.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using qfactor::cli::run_cli;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("qfactor_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("estimate end to end on a generated panel", "[cli]") {
  const fs::path dir = scratch("estimate");
  const std::string csv = (dir / "case1.csv").string();
  REQUIRE(cli({"generate", "--dgp", "case1_indep", "--size", "60x60", "--seed", "3", "-o", csv}).code == 0);
  REQUIRE(fs::exists(csv));

  const Run r = cli({"estimate", "-i", csv, "--tau", "0.25,0.5,0.75", "--r", "auto", "--k", "5", "-o",
                     (dir / "fits").string()});
  INFO(r.err);
  REQUIRE(r.code == 0);
  for (const char* tag : {"tau0p25", "tau0p5", "tau0p75"}) {
    const fs::path json = dir / "fits" / (std::string("fit_") + tag + ".json");
    REQUIRE(fs::exists(json));
    const auto doc = qfactor::Json::parse(slurp(json));
    CHECK(doc.contains("loadings"));
    CHECK(doc.at("r").get<int>() >= 1);
    CHECK(fs::exists(dir / "fits" / (std::string("fit_") + tag + "_factors.csv")));
    CHECK(fs::exists(dir / "fits" / (std::string("fit_") + tag + "_loadings.csv")));
  }
  CHECK(r.err.find("qfactor estimate config") != std::string::npos);
}

TEST_CASE("estimate input validation", "[cli]") {
  const fs::path dir = scratch("validation");
  const std::string csv = (dir / "p.csv").string();
  REQUIRE(cli({"generate", "--dgp", "case1_indep", "--size", "20x20", "-o", csv}).code == 0);

  const Run bad_tau = cli({"estimate", "-i", csv, "--tau", "1.5"});
  CHECK(bad_tau.code == 2);
  CHECK(bad_tau.err.find("quantile outside (0,1)") != std::string::npos);
  CHECK(cli({"estimate", "-i", csv, "--r", "0"}).code == 2);
  CHECK(cli({"estimate", "-i", (dir / "missing.csv").string()}).code == 2);
  CHECK(cli({"estimate"}).code == 2);
  CHECK(cli({"bogus"}).code == 2);
}

TEST_CASE("config file precedence", "[cli]") {
  const fs::path dir = scratch("config");
  const std::string csv = (dir / "p.csv").string();
  REQUIRE(cli({"generate", "--dgp", "case1_indep", "--size", "30x30", "-o", csv}).code == 0);
  {
    std::ofstream cfg(dir / "cfg.json");
    cfg << R"({"tau": [0.3], "r": 2, "prefix": "fromcfg"})";
  }
  const Run r = cli({"estimate", "-i", csv, "--config", (dir / "cfg.json").string(), "--r", "1", "-o",
                     (dir / "out").string()});
  INFO(r.err);
  REQUIRE(r.code == 0);
  const auto doc = qfactor::Json::parse(slurp(dir / "out" / "fromcfg_tau0p3.json"));
  CHECK(doc.at("r") == 1);
}

TEST_CASE("select subcommand", "[cli]") {
  const fs::path dir = scratch("select");
  const std::string csv = (dir / "p.csv").string();
  {
    // Noiseless rank-2 panel.
    std::ofstream out(csv);
    for (int t = 0; t < 30; ++t) {
      for (int i = 0; i < 25; ++i) {
        const double v = std::sin(0.3 * t) * (1.0 + 0.1 * i) + 2.0 * std::cos(0.7 * t) * std::cos(1.3 * i);
        out << (i ? "," : "") << v;
      }
      out << '\n';
    }
  }
  const Run rank = cli({"select", "-i", csv, "--method", "rank", "--k", "5", "--no-standardize"});
  INFO(rank.err);
  INFO(rank.out);
  REQUIRE(rank.code == 0);
  CHECK(rank.out.find("r_hat=2") != std::string::npos);

  const std::string all_json = (dir / "all.json").string();
  const Run all = cli({"select", "-i", csv, "--method", "all", "--k", "4", "-o", all_json});
  REQUIRE(all.code == 0);
  const auto doc = qfactor::Json::parse(slurp(all_json));
  CHECK(doc.size() == 5);
  const std::string er_json = (dir / "er.json").string();
  REQUIRE(cli({"select", "-i", csv, "--method", "er", "--k", "4", "-o", er_json}).code == 0);
  const auto er = qfactor::Json::parse(slurp(er_json));
  CHECK(er.at(0) == doc.at(4));

  CHECK(cli({"select", "-i", csv, "--k", "0"}).code == 2);
  CHECK(cli({"select", "-i", csv, "--method", "magic"}).code == 2);
}

TEST_CASE("sqr subcommand writes bands", "[cli]") {
  const fs::path dir = scratch("sqr");
  const std::string csv = (dir / "p.csv").string();
  REQUIRE(cli({"generate", "--dgp", "fig_sqr", "--size", "40x40", "-o", csv}).code == 0);
  const Run r = cli({"sqr", "-i", csv, "--tau", "0.25", "--r", "1", "--no-standardize", "-o", (dir / "o").string()});
  INFO(r.err);
  REQUIRE(r.code == 0);
  const auto doc = qfactor::Json::parse(slurp(dir / "o" / "sqr_tau0p25.json"));
  CHECK(doc.contains("h"));
  CHECK(doc.contains("b"));
  CHECK(fs::exists(dir / "o" / "sqr_tau0p25_factor_bands.csv"));
}

TEST_CASE("simulate subcommand", "[cli]") {
  const fs::path dir = scratch("simulate");
  CHECK(cli({"simulate", "--experiment", "table9"}).code == 2);

  auto run = [&](const std::string& name, const std::string& threads) {
    const std::string path = (dir / name).string();
    const Run r = cli({"simulate", "--experiment", "table3", "--n", "3", "--size", "30x30", "--seed", "7", "--k",
                       "4", "--tau", "0.25", "--threads", threads, "--format", "json", "-o", path});
    INFO(r.err);
    REQUIRE(r.code == 0);
    return slurp(path);
  };
  const std::string a = run("a.json", "1");
  const std::string b = run("b.json", "1");
  const std::string c = run("c.json", "2");
  CHECK(a == b);
  CHECK(a == c);
  const auto doc = qfactor::Json::parse(a);
  CHECK(doc.at("spec").at("N") == 30);
  CHECK(doc.at("replications") == 3);
}
