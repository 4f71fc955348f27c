#ifndef HMME_DESIGN_HPP
#define HMME_DESIGN_HPP

#include <charconv>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hmme/error.hpp"
#include "hmme/model.hpp"

namespace hmme {

/// Rectangular table of string cells with a header row.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> column_index(std::string_view name) const {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (header[j] == name) return j;
    }
    return std::nullopt;
  }
};

inline std::optional<double> parse_double(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) text.remove_suffix(1);
  if (text.empty()) return std::nullopt;
  if (text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(value)) return std::nullopt;
  return value;
}

struct FixedTerm {
  enum class Kind { Intercept, Numeric, Categorical };
  Kind kind = Kind::Intercept;
  std::string column;  // empty for the intercept

  static FixedTerm intercept() { return {Kind::Intercept, {}}; }
  static FixedTerm numeric(std::string c) { return {Kind::Numeric, std::move(c)}; }
  static FixedTerm categorical(std::string c) { return {Kind::Categorical, std::move(c)}; }

  friend bool operator==(const FixedTerm&, const FixedTerm&) = default;
};

/// Response column, fixed terms (in column order of X) and random factor columns.
struct ModelDescription {
  std::string response;
  std::vector<FixedTerm> fixed;
  std::vector<std::string> random;

  friend bool operator==(const ModelDescription&, const ModelDescription&) = default;
};

inline constexpr std::string_view kInterceptLabel = "(Intercept)";

namespace detail {

inline std::size_t require_column(const Table& t, const std::string& name) {
  auto idx = t.column_index(name);
  if (!idx) throw Error(ErrorCode::MissingColumn, "column '" + name + "' not found in data");
  return *idx;
}

/// Distinct values of a column in order of first appearance, and the level index of every row.
inline std::pair<std::vector<std::string>, std::vector<Index>> levels_of(const Table& t, std::size_t col) {
  std::vector<std::string> levels;
  std::unordered_map<std::string, Index> seen;
  std::vector<Index> codes;
  codes.reserve(t.rows.size());
  for (const auto& row : t.rows) {
    const std::string& v = row[col];
    auto [it, inserted] = seen.emplace(v, static_cast<Index>(levels.size()));
    if (inserted) levels.push_back(v);
    codes.push_back(it->second);
  }
  return {levels, codes};
}

}  // namespace detail

/// Dummy-codes a table into an LmmSpec.
///
/// Column order of X follows `model.fixed`: the intercept is a column of ones
/// labelled "(Intercept)", a numeric term is copied as is (label = column name),
/// and a categorical term expands into one indicator per level, labelled
/// "column:level", levels in order of first appearance (no reference level is
/// dropped). Each random factor yields an indicator block with one column per
/// observed level, again in order of first appearance.
inline LmmSpec build_from_table(const Table& table, const ModelDescription& model) {
  for (const auto& row : table.rows) {
    if (row.size() != table.header.size()) {
      throw Error(ErrorCode::Parse, "ragged table: every row needs " + std::to_string(table.header.size()) + " cells");
    }
  }
  const auto n = static_cast<Index>(table.rows.size());
  const std::size_t ycol = detail::require_column(table, model.response);
  VectorXd y(n);
  for (Index i = 0; i < n; ++i) {
    auto v = parse_double(table.rows[static_cast<std::size_t>(i)][ycol]);
    if (!v) {
      throw Error(ErrorCode::NonNumericResponse, "response column '" + model.response + "' has non-numeric value '" +
                                                     table.rows[static_cast<std::size_t>(i)][ycol] + "' in row " +
                                                     std::to_string(i + 1));
    }
    y(i) = *v;
  }

  std::vector<VectorXd> xcols;
  std::vector<std::string> xlabels;
  for (const auto& term : model.fixed) {
    switch (term.kind) {
      case FixedTerm::Kind::Intercept:
        xcols.push_back(VectorXd::Ones(n));
        xlabels.emplace_back(kInterceptLabel);
        break;
      case FixedTerm::Kind::Numeric: {
        const std::size_t c = detail::require_column(table, term.column);
        VectorXd col(n);
        for (Index i = 0; i < n; ++i) {
          auto v = parse_double(table.rows[static_cast<std::size_t>(i)][c]);
          if (!v) throw Error(ErrorCode::Parse, "numeric fixed term '" + term.column + "' has a non-numeric value");
          col(i) = *v;
        }
        xcols.push_back(std::move(col));
        xlabels.push_back(term.column);
        break;
      }
      case FixedTerm::Kind::Categorical: {
        const std::size_t c = detail::require_column(table, term.column);
        auto [levels, codes] = detail::levels_of(table, c);
        for (std::size_t l = 0; l < levels.size(); ++l) {
          VectorXd col = VectorXd::Zero(n);
          for (Index i = 0; i < n; ++i) {
            if (codes[static_cast<std::size_t>(i)] == static_cast<Index>(l)) col(i) = 1.0;
          }
          xcols.push_back(std::move(col));
          xlabels.push_back(term.column + ":" + levels[l]);
        }
        break;
      }
    }
  }
  MatrixXd x(n, static_cast<Index>(xcols.size()));
  for (std::size_t j = 0; j < xcols.size(); ++j) x.col(static_cast<Index>(j)) = xcols[j];

  std::vector<MatrixXd> zblocks;
  std::vector<std::vector<std::string>> level_labels;
  for (const auto& factor : model.random) {
    const std::size_t c = detail::require_column(table, factor);
    auto [levels, codes] = detail::levels_of(table, c);
    if (levels.size() < 2) {
      throw Error(ErrorCode::FactorWithOneLevel, "random factor '" + factor + "' has a single level");
    }
    MatrixXd z = MatrixXd::Zero(n, static_cast<Index>(levels.size()));
    for (Index i = 0; i < n; ++i) z(i, codes[static_cast<std::size_t>(i)]) = 1.0;
    zblocks.push_back(std::move(z));
    level_labels.push_back(std::move(levels));
  }

  return LmmSpec(std::move(y), std::move(x), std::move(zblocks), std::move(xlabels), model.random,
                 std::move(level_labels));
}

}  // namespace hmme

#endif  // HMME_DESIGN_HPP
