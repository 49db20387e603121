#pragma once

// Balanced T x N panel (rows = time, columns = units), CSV ingestion and
// per-unit standardization.

#include "qfactor/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <charconv>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace qfactor {

class PanelData {
 public:
  /// values: T x N. Empty label vectors are synthesized as u1..uN and t1..tT.
  explicit PanelData(Eigen::MatrixXd values, std::vector<std::string> unit_ids = {},
                     std::vector<std::string> time_ids = {})
      : values_(std::move(values)), unit_ids_(std::move(unit_ids)), time_ids_(std::move(time_ids)) {
    if (values_.rows() < 2 || values_.cols() < 2) {
      throw DimensionError("panel needs T >= 2 and N >= 2, got T=" + std::to_string(values_.rows()) +
                           ", N=" + std::to_string(values_.cols()));
    }
    if (!values_.allFinite()) throw BalancedPanelError("panel contains missing or non-finite entries");
    if (unit_ids_.empty()) unit_ids_ = synthesize("u", values_.cols());
    if (time_ids_.empty()) time_ids_ = synthesize("t", values_.rows());
    if (static_cast<Eigen::Index>(unit_ids_.size()) != values_.cols() ||
        static_cast<Eigen::Index>(time_ids_.size()) != values_.rows()) {
      throw DimensionError("panel label counts do not match the value matrix");
    }
  }

  const Eigen::MatrixXd& values() const noexcept { return values_; }
  Eigen::Index T() const noexcept { return values_.rows(); }
  Eigen::Index N() const noexcept { return values_.cols(); }
  const std::vector<std::string>& unit_ids() const noexcept { return unit_ids_; }
  const std::vector<std::string>& time_ids() const noexcept { return time_ids_; }
  bool standardized() const noexcept { return standardized_; }
  /// Populated only when standardized().
  const Eigen::VectorXd& orig_means() const noexcept { return orig_means_; }
  const Eigen::VectorXd& orig_sds() const noexcept { return orig_sds_; }

 private:
  friend PanelData standardize(const PanelData& p);
  friend PanelData unstandardize(const PanelData& p);

  static std::vector<std::string> synthesize(const char* prefix, Eigen::Index count) {
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(count));
    for (Eigen::Index i = 0; i < count; ++i) out.push_back(prefix + std::to_string(i + 1));
    return out;
  }

  Eigen::MatrixXd values_;
  std::vector<std::string> unit_ids_;
  std::vector<std::string> time_ids_;
  bool standardized_ = false;
  Eigen::VectorXd orig_means_;
  Eigen::VectorXd orig_sds_;
};

/// Demean each unit and scale it to unit sample variance (divisor T-1).
inline PanelData standardize(const PanelData& p) {
  if (p.standardized()) throw DomainError("panel is already standardized");
  const Eigen::Index t = p.T();
  const Eigen::Index n = p.N();
  Eigen::MatrixXd z(t, n);
  Eigen::VectorXd means(n);
  Eigen::VectorXd sds(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = p.values().col(i).mean();
    const Eigen::ArrayXd dev = p.values().col(i).array() - mean;
    const double sd = std::sqrt(dev.square().sum() / static_cast<double>(t - 1));
    if (!(sd > 1e-12 * std::abs(mean)) || sd == 0.0) throw DegenerateColumnError(p.unit_ids()[static_cast<std::size_t>(i)]);
    z.col(i) = (dev / sd).matrix();
    means(i) = mean;
    sds(i) = sd;
  }
  PanelData out(std::move(z), p.unit_ids(), p.time_ids());
  out.standardized_ = true;
  out.orig_means_ = std::move(means);
  out.orig_sds_ = std::move(sds);
  return out;
}

/// Inverse of standardize: restores the original scale and clears the flag.
inline PanelData unstandardize(const PanelData& p) {
  if (!p.standardized()) throw DomainError("panel is not standardized");
  Eigen::MatrixXd x = p.values();
  for (Eigen::Index i = 0; i < p.N(); ++i) x.col(i) = x.col(i).array() * p.orig_sds_(i) + p.orig_means_(i);
  return PanelData(std::move(x), p.unit_ids(), p.time_ids());
}

// ---------------------------------------------------------------------------
// CSV

enum class Layout { TimeByUnit, UnitByTime };
enum class LabelMode { Auto, Present, Absent };

struct CsvOptions {
  Layout layout = Layout::TimeByUnit;
  LabelMode header = LabelMode::Auto;        ///< first row holds labels
  LabelMode label_column = LabelMode::Auto;  ///< first column holds labels
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string_view rest(line);
  for (;;) {
    const auto comma = rest.find(',');
    cells.emplace_back(trim(rest.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return cells;
}

inline bool is_missing_token(std::string_view s) {
  return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "NAN" || s == "na" || s == ".";
}

inline bool parse_number(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(out);
}

// Corner cells that name a label column, so numeric ids (years, dates) stay labels.
inline bool is_index_name(std::string_view s) {
  std::string lower(trim(s));
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (const char* name : {"date", "time", "period", "year", "quarter", "month", "t", "id", "unit"}) {
    if (lower == name) return true;
  }
  return false;
}

inline bool looks_numeric(std::string_view s) {
  double v = 0.0;
  return parse_number(s, v);
}

inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::general, 17);
  return std::string(buf.data(), res.ptr);
}

}  // namespace detail

inline PanelData parse_csv(std::istream& in, const CsvOptions& opts = {}) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (detail::trim(line).empty()) continue;
    rows.push_back(detail::split_csv_line(line));
    line_numbers.push_back(line_no);
  }
  if (rows.empty()) throw DimensionError("CSV input is empty");

  bool has_header = opts.header == LabelMode::Present;
  if (opts.header == LabelMode::Auto) {
    for (const auto& cell : rows.front()) {
      if (!detail::looks_numeric(cell)) {
        has_header = true;
        break;
      }
    }
  }
  const std::size_t first_data = has_header ? 1 : 0;
  if (rows.size() <= first_data) throw DimensionError("CSV input has no data rows");

  bool has_labels = opts.label_column == LabelMode::Present;
  if (opts.label_column == LabelMode::Auto) {
    const std::string& probe = rows[first_data].front();
    has_labels = !detail::looks_numeric(probe) && !detail::is_missing_token(probe);
    if (has_header && rows.front().size() == rows[first_data].size() &&
        (rows.front().front().empty() || detail::is_index_name(rows.front().front()))) {
      has_labels = true;
    }
  }
  const std::size_t first_col = has_labels ? 1 : 0;

  const std::size_t width = rows[first_data].size();
  if (width <= first_col) throw DimensionError("CSV input has no value columns");
  const std::size_t body_rows = rows.size() - first_data;
  const std::size_t body_cols = width - first_col;

  Eigen::MatrixXd body(static_cast<Eigen::Index>(body_rows), static_cast<Eigen::Index>(body_cols));
  std::vector<std::string> row_labels;
  for (std::size_t r = 0; r < body_rows; ++r) {
    const auto& cells = rows[first_data + r];
    const std::size_t line_id = line_numbers[first_data + r];
    if (cells.size() != width) {
      throw BalancedPanelError("CSV row " + std::to_string(line_id) + " has " + std::to_string(cells.size()) +
                               " fields, expected " + std::to_string(width));
    }
    if (has_labels) row_labels.push_back(cells.front());
    for (std::size_t c = 0; c < body_cols; ++c) {
      const std::string& cell = cells[first_col + c];
      if (detail::is_missing_token(cell)) {
        throw BalancedPanelError("missing value at row " + std::to_string(line_id) + ", column " +
                                 std::to_string(first_col + c + 1));
      }
      double v = 0.0;
      if (!detail::parse_number(cell, v)) {
        throw ParseError("non-numeric cell '" + cell + "'", line_id, first_col + c + 1);
      }
      body(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
    }
  }
  std::vector<std::string> col_labels;
  if (has_header) {
    const auto& header = rows.front();
    if (header.size() != width) throw BalancedPanelError("CSV header width does not match the data rows");
    col_labels.assign(header.begin() + static_cast<std::ptrdiff_t>(first_col), header.end());
  }

  if (opts.layout == Layout::TimeByUnit) {
    return PanelData(std::move(body), std::move(col_labels), std::move(row_labels));
  }
  Eigen::MatrixXd transposed = body.transpose();
  return PanelData(std::move(transposed), std::move(row_labels), std::move(col_labels));
}

inline PanelData load_csv(const std::string& path, const CsvOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open CSV file '" + path + "'");
  return parse_csv(in, opts);
}

inline PanelData load_csv(const std::string& path, Layout layout) {
  CsvOptions opts;
  opts.layout = layout;
  return load_csv(path, opts);
}

/// Writes header and label column; values carry 17 significant digits.
inline void write_csv(std::ostream& out, const PanelData& p, Layout layout = Layout::TimeByUnit) {
  const bool by_time = layout == Layout::TimeByUnit;
  const auto& row_ids = by_time ? p.time_ids() : p.unit_ids();
  const auto& col_ids = by_time ? p.unit_ids() : p.time_ids();
  out << (by_time ? "time" : "unit");
  for (const auto& id : col_ids) out << ',' << id;
  out << '\n';
  for (std::size_t r = 0; r < row_ids.size(); ++r) {
    out << row_ids[r];
    for (std::size_t c = 0; c < col_ids.size(); ++c) {
      const auto ri = static_cast<Eigen::Index>(r);
      const auto ci = static_cast<Eigen::Index>(c);
      out << ',' << detail::format_double(by_time ? p.values()(ri, ci) : p.values()(ci, ri));
    }
    out << '\n';
  }
}

inline void save_csv(const PanelData& p, const std::string& path, Layout layout = Layout::TimeByUnit) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write CSV file '" + path + "'");
  write_csv(out, p, layout);
}

}  // namespace qfactor
