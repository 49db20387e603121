#include "qfactor/panel.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace qfactor;
using Catch::Approx;

namespace {

PanelData from_text(const std::string& text, Layout layout = Layout::TimeByUnit) {
  std::istringstream in(text);
  CsvOptions opts;
  opts.layout = layout;
  return parse_csv(in, opts);
}

}  // namespace

TEST_CASE("CSV layouts", "[panel][csv]") {
  const std::string text = "1,2\n3,4\n5,6\n";
  const PanelData a = from_text(text);
  CHECK(a.T() == 3);
  CHECK(a.N() == 2);
  CHECK(a.values()(2, 1) == 6.0);
  CHECK(a.unit_ids().front() == "u1");
  CHECK(a.time_ids().back() == "t3");

  const PanelData b = from_text(text, Layout::UnitByTime);
  CHECK(b.T() == 2);
  CHECK(b.N() == 3);
  CHECK(b.values()(1, 2) == 6.0);
}

TEST_CASE("CSV labels are detected", "[panel][csv]") {
  const PanelData p = from_text("date,a,b\n2001,1.5,2\n2002,3,-4e-1\n2003,0,1\n");
  CHECK(p.N() == 2);
  CHECK(p.T() == 3);
  CHECK(p.unit_ids() == std::vector<std::string>{"a", "b"});
  CHECK(p.values()(1, 1) == Approx(-0.4));
  // A numeric-looking label column is still data; with a header whose corner
  // cell is empty it is treated as labels.
  const PanelData q = from_text(",x,y\nq1,1,2\nq2,3,4\n");
  CHECK(q.time_ids() == std::vector<std::string>{"q1", "q2"});
}

TEST_CASE("CSV error paths", "[panel][csv]") {
  CHECK_THROWS_AS(from_text("1,2\n3,\n5,6\n"), BalancedPanelError);
  CHECK_THROWS_AS(from_text("1,2\n3,NA\n5,6\n"), BalancedPanelError);
  CHECK_THROWS_AS(from_text("1,2\n3\n5,6\n"), BalancedPanelError);
  CHECK_THROWS_AS(from_text("1,2\n"), DimensionError);
  CHECK_THROWS_AS(from_text("1\n2\n3\n"), DimensionError);
  try {
    from_text("a,b\n1,2\n3,x4\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.row() == 3);
    CHECK(e.column() == 2);
  }
}

TEST_CASE("CSV round trip", "[panel][csv]") {
  Eigen::MatrixXd v(3, 2);
  v << 0.1, -1e-17, 1.0 / 3.0, 2e300, -5, 7;
  const PanelData p(v, {"alpha", "beta"}, {"d1", "d2", "d3"});
  const auto path = std::filesystem::temp_directory_path() / "qfactor_panel_roundtrip.csv";
  save_csv(p, path.string());
  const PanelData q = load_csv(path.string());
  CHECK(q.values() == p.values());
  CHECK(q.unit_ids() == p.unit_ids());
  CHECK(q.time_ids() == p.time_ids());
  save_csv(p, path.string(), Layout::UnitByTime);
  CHECK(load_csv(path.string(), Layout::UnitByTime).values() == p.values());
  std::filesystem::remove(path);
}

TEST_CASE("standardize", "[panel]") {
  Eigen::MatrixXd v(3, 2);
  v << 1, 10, 2, 20, 3, 60;
  const PanelData z = standardize(PanelData(v));
  CHECK(z.standardized());
  CHECK(z.values()(0, 0) == Approx(-1.0));
  CHECK(z.values()(1, 0) == Approx(0.0).margin(1e-15));
  CHECK(z.values()(2, 0) == Approx(1.0));
  CHECK(z.orig_means()(0) == 2.0);
  CHECK(z.orig_sds()(0) == 1.0);
  for (Eigen::Index i = 0; i < 2; ++i) {
    const auto col = z.values().col(i).array();
    CHECK(std::abs(col.mean()) < 1e-10);
    CHECK(std::abs((col - col.mean()).square().sum() / 2.0 - 1.0) < 1e-8);
    CHECK(z.orig_sds()(i) > 0.0);
  }
  CHECK(unstandardize(z).values().isApprox(v, 1e-14));
  CHECK_THROWS_AS(standardize(z), DomainError);

  // Standardizing an already standardized panel (flag dropped) is a no-op.
  const PanelData again = standardize(PanelData(z.values()));
  CHECK((again.values() - z.values()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("standardize rejects constant units", "[panel]") {
  Eigen::MatrixXd v(3, 2);
  v << 5, 1, 5, 2, 5, 3;
  try {
    standardize(PanelData(v, {"flat", "ok"}));
    FAIL("expected DegenerateColumnError");
  } catch (const DegenerateColumnError& e) {
    CHECK(std::string(e.what()).find("flat") != std::string::npos);
  }
}

TEST_CASE("panel construction checks", "[panel]") {
  CHECK_THROWS_AS(PanelData(Eigen::MatrixXd::Zero(1, 4)), DimensionError);
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(3, 3);
  v(1, 1) = std::nan("");
  CHECK_THROWS_AS(PanelData(v), BalancedPanelError);
  CHECK_THROWS_AS(PanelData(Eigen::MatrixXd::Zero(3, 3), {"a"}), DimensionError);
}
