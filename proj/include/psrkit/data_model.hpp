#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "csv.hpp"
#include "error.hpp"
#include "stats.hpp"

namespace psrkit {

enum class Kind { continuous, ordinal, binary, count, right_censored };

inline const char* kind_name(Kind k) {
  switch (k) {
    case Kind::continuous: return "continuous";
    case Kind::ordinal: return "ordinal";
    case Kind::binary: return "binary";
    case Kind::count: return "count";
    case Kind::right_censored: return "surv";
  }
  return "?";
}

/// A named data vector. Numeric kinds store the value directly; ordinal
/// columns store 0-based level codes; right-censored columns store the time
/// in `values` and the event indicator in `events`. Missing cells are NaN.
struct Column {
  std::string name;
  Kind kind = Kind::continuous;
  std::vector<std::string> levels;  // ordinal only, in increasing order
  std::vector<double> values;
  std::vector<int> events;          // right_censored only
  std::string time_field, event_field;

  std::size_t size() const { return values.size(); }
  bool missing(std::size_t i) const { return std::isnan(values[i]); }
  bool orderable() const { return kind != Kind::right_censored; }

  static Column continuous(std::string name, std::vector<double> v) {
    Column c;
    c.name = std::move(name);
    c.values = std::move(v);
    return c;
  }

  static Column binary(std::string name, std::vector<double> v) {
    for (double x : v)
      require(std::isnan(x) || x == 0.0 || x == 1.0,
              "binary column '" + name + "' has a value other than 0/1");
    Column c = continuous(std::move(name), std::move(v));
    c.kind = Kind::binary;
    return c;
  }

  static Column count(std::string name, std::vector<double> v) {
    for (double x : v)
      require(std::isnan(x) || (x >= 0.0 && x == std::floor(x)),
              "count column '" + name + "' has a value that is not a nonnegative integer");
    Column c = continuous(std::move(name), std::move(v));
    c.kind = Kind::count;
    return c;
  }

  static Column ordinal(std::string name, std::vector<std::string> levels,
                        std::vector<double> codes) {
    require(!levels.empty(), "ordinal column '" + name + "' has no levels");
    std::set<std::string> seen(levels.begin(), levels.end());
    require(seen.size() == levels.size(), "ordinal column '" + name + "' has duplicate levels");
    for (double x : codes)
      require(std::isnan(x) || (x >= 0 && x < static_cast<double>(levels.size()) &&
                                x == std::floor(x)),
              "ordinal column '" + name + "' has an out-of-range code");
    Column c = continuous(std::move(name), std::move(codes));
    c.kind = Kind::ordinal;
    c.levels = std::move(levels);
    return c;
  }

  static Column ordinal_from_labels(std::string name, std::vector<std::string> levels,
                                    const std::vector<std::optional<std::string>>& labels) {
    std::vector<double> codes;
    codes.reserve(labels.size());
    for (const auto& l : labels) {
      if (!l) {
        codes.push_back(stats::kNaN);
        continue;
      }
      auto it = std::find(levels.begin(), levels.end(), *l);
      if (it == levels.end())
        throw UserError("column '" + name + "': unknown ordinal level '" + *l + "'");
      codes.push_back(static_cast<double>(it - levels.begin()));
    }
    return ordinal(std::move(name), std::move(levels), std::move(codes));
  }

  static Column right_censored(std::string name, std::vector<double> times,
                               std::vector<int> events) {
    require(times.size() == events.size(), "censored column '" + name + "': length mismatch");
    for (std::size_t i = 0; i < times.size(); ++i) {
      if (std::isnan(times[i])) continue;
      require(times[i] >= 0.0, "censored column '" + name + "': negative time");
      require(events[i] == 0 || events[i] == 1,
              "censored column '" + name + "': event indicator must be 0 or 1");
    }
    Column c = continuous(std::move(name), std::move(times));
    c.kind = Kind::right_censored;
    c.events = std::move(events);
    return c;
  }

  Column subset(std::span<const std::size_t> rows) const {
    Column c = *this;
    c.values.clear();
    c.events.clear();
    for (auto r : rows) {
      c.values.push_back(values[r]);
      if (kind == Kind::right_censored) c.events.push_back(events[r]);
    }
    return c;
  }
};

struct Dataset {
  std::vector<Column> columns;
  std::vector<std::string> row_ids;  // empty when absent

  std::size_t n() const { return columns.empty() ? 0 : columns.front().size(); }

  bool has(const std::string& name) const {
    return std::any_of(columns.begin(), columns.end(),
                       [&](const Column& c) { return c.name == name; });
  }

  const Column& column(const std::string& name) const {
    for (const auto& c : columns)
      if (c.name == name) return c;
    throw UserError("unknown column '" + name + "'");
  }

  void add(Column c) {
    require(!has(c.name), "duplicate column name '" + c.name + "'");
    require(columns.empty() || c.size() == n(),
            "column '" + c.name + "' length differs from dataset");
    columns.push_back(std::move(c));
  }

  std::string row_id(std::size_t i) const {
    return row_ids.empty() ? std::to_string(i + 1) : row_ids[i];
  }

  Dataset subset(std::span<const std::size_t> rows) const {
    Dataset d;
    for (const auto& c : columns) d.columns.push_back(c.subset(rows));
    if (!row_ids.empty())
      for (auto r : rows) d.row_ids.push_back(row_ids[r]);
    return d;
  }
};

// ---------------------------------------------------------------------------
// Schema and CSV ingestion

struct ColumnSpec {
  std::string name;
  Kind kind = Kind::continuous;
  std::vector<std::string> levels;  // ordinal; empty = numeric codes sorted ascending
  std::string time_field, event_field;
};

using Schema = std::vector<ColumnSpec>;

namespace detail {

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

// Split on `sep` outside parentheses.
inline std::vector<std::string> split_top(std::string_view s, std::string_view seps) {
  std::vector<std::string> out;
  int depth = 0;
  std::string cur;
  for (char c : s) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (depth == 0 && seps.find(c) != std::string_view::npos) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  std::erase_if(out, [](const std::string& x) { return x.empty(); });
  return out;
}

inline bool is_missing_cell(const std::string& s) { return s.empty() || s == "NA"; }

inline double parse_number(const std::string& s, const std::string& col, std::size_t row) {
  std::string t = trim(s);
  double v = 0.0;
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || !std::isfinite(v))
    throw UserError("column '" + col + "', row " + std::to_string(row) +
                    ": non-numeric value '" + s + "'");
  return v;
}

}  // namespace detail

/// Parses declarations like
///   `age:continuous; stage:ordinal(normal<ASCUS<low<high<cancer); os:surv(time,event)`.
/// Entries are separated by ';', newlines, or commas outside parentheses.
inline Schema parse_schema(std::string_view text) {
  Schema schema;
  for (const auto& entry : detail::split_top(text, ";,\n")) {
    auto colon = entry.find(':');
    require(colon != std::string::npos, "schema entry '" + entry + "' lacks ':kind'");
    ColumnSpec spec;
    spec.name = detail::trim(entry.substr(0, colon));
    std::string kind = detail::trim(entry.substr(colon + 1));
    std::string arg;
    if (auto lp = kind.find('('); lp != std::string::npos) {
      require(kind.back() == ')', "schema entry '" + entry + "': unbalanced parentheses");
      arg = kind.substr(lp + 1, kind.size() - lp - 2);
      kind = detail::trim(kind.substr(0, lp));
    }
    if (kind == "continuous") {
      spec.kind = Kind::continuous;
    } else if (kind == "binary") {
      spec.kind = Kind::binary;
    } else if (kind == "count") {
      spec.kind = Kind::count;
    } else if (kind == "ordinal") {
      spec.kind = Kind::ordinal;
      if (!arg.empty()) {
        for (auto& l : detail::split_top(arg, "<")) spec.levels.push_back(l);
        std::set<std::string> uniq(spec.levels.begin(), spec.levels.end());
        require(uniq.size() == spec.levels.size(),
                "schema entry '" + entry + "': ordinal levels must be distinct");
      }
    } else if (kind == "surv") {
      spec.kind = Kind::right_censored;
      auto parts = detail::split_top(arg, ",");
      require(parts.size() == 2, "schema entry '" + entry + "': surv needs (time,event)");
      spec.time_field = parts[0];
      spec.event_field = parts[1];
    } else {
      throw UserError("schema entry '" + entry + "': unknown kind '" + kind + "'");
    }
    schema.push_back(std::move(spec));
  }
  return schema;
}

/// Builds a Dataset from CSV text. Header columns not named in the schema
/// (and not consumed by a surv declaration) are read as continuous. A header
/// column named `row_id` supplies row identifiers.
inline Dataset parse_csv_dataset(const std::string& text, const Schema& schema) {
  auto rows = csv::parse(text);
  require(!rows.empty(), "csv: missing header row");
  const auto& header = rows.front();
  std::map<std::string, std::size_t> pos;
  for (std::size_t j = 0; j < header.size(); ++j) {
    auto name = detail::trim(header[j]);
    require(!pos.contains(name), "csv: duplicate header '" + name + "'");
    pos[name] = j;
  }
  for (std::size_t r = 1; r < rows.size(); ++r)
    if (rows[r].size() != header.size())
      throw UserError("csv row " + std::to_string(r + 1) + ": expected " +
                      std::to_string(header.size()) + " fields, found " +
                      std::to_string(rows[r].size()));
  const std::size_t n = rows.size() - 1;
  auto field = [&](const std::string& name) {
    auto it = pos.find(name);
    if (it == pos.end()) throw UserError("schema names column '" + name + "' not in csv header");
    return it->second;
  };

  Dataset d;
  std::set<std::string> consumed;
  auto numeric = [&](std::size_t j, const std::string& col) {
    std::vector<double> v(n);
    for (std::size_t r = 0; r < n; ++r) {
      const auto& s = rows[r + 1][j];
      v[r] = detail::is_missing_cell(s) ? stats::kNaN : detail::parse_number(s, col, r + 1);
    }
    return v;
  };

  for (const auto& spec : schema) {
    if (spec.kind == Kind::right_censored) {
      auto tj = field(spec.time_field), ej = field(spec.event_field);
      auto times = numeric(tj, spec.name);
      auto ev = numeric(ej, spec.name);
      std::vector<int> events(n, 0);
      for (std::size_t r = 0; r < n; ++r) {
        if (std::isnan(ev[r])) times[r] = stats::kNaN;
        else events[r] = static_cast<int>(ev[r]);
        if (!std::isnan(ev[r]) && ev[r] != 0.0 && ev[r] != 1.0)
          throw UserError("column '" + spec.name + "', row " + std::to_string(r + 1) +
                          ": event indicator must be 0 or 1");
      }
      Column c = Column::right_censored(spec.name, std::move(times), std::move(events));
      c.time_field = spec.time_field;
      c.event_field = spec.event_field;
      d.add(std::move(c));
      consumed.insert(spec.time_field);
      consumed.insert(spec.event_field);
      continue;
    }
    auto j = field(spec.name);
    consumed.insert(spec.name);
    switch (spec.kind) {
      case Kind::continuous: d.add(Column::continuous(spec.name, numeric(j, spec.name))); break;
      case Kind::binary: d.add(Column::binary(spec.name, numeric(j, spec.name))); break;
      case Kind::count: d.add(Column::count(spec.name, numeric(j, spec.name))); break;
      case Kind::ordinal: {
        if (spec.levels.empty()) {
          auto v = numeric(j, spec.name);
          std::set<double> distinct;
          for (double x : v)
            if (!std::isnan(x)) distinct.insert(x);
          std::vector<std::string> levels;
          std::vector<double> keys(distinct.begin(), distinct.end());
          for (double x : keys) {
            std::ostringstream ss;
            ss.precision(17);
            ss << x;
            levels.push_back(ss.str());
          }
          for (double& x : v)
            if (!std::isnan(x))
              x = static_cast<double>(std::lower_bound(keys.begin(), keys.end(), x) - keys.begin());
          d.add(Column::ordinal(spec.name, std::move(levels), std::move(v)));
        } else {
          std::vector<std::optional<std::string>> labels(n);
          for (std::size_t r = 0; r < n; ++r) {
            auto s = detail::trim(rows[r + 1][j]);
            if (!detail::is_missing_cell(s)) labels[r] = s;
          }
          d.add(Column::ordinal_from_labels(spec.name, spec.levels, labels));
        }
        break;
      }
      case Kind::right_censored: break;
    }
  }
  for (std::size_t j = 0; j < header.size(); ++j) {
    auto name = detail::trim(header[j]);
    if (consumed.contains(name)) continue;
    if (name == "row_id") {
      for (std::size_t r = 0; r < n; ++r) d.row_ids.push_back(rows[r + 1][j]);
      continue;
    }
    d.add(Column::continuous(name, numeric(j, name)));
  }
  require(n > 0, "csv: no data rows");
  return d;
}

inline Dataset load_csv(const std::string& path, const Schema& schema) {
  return parse_csv_dataset(csv::read_file(path), schema);
}

inline std::string format_double(double x) {
  if (std::isnan(x)) return "NA";
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);  // shortest round-trip form
  return std::string(buf, p);
}

/// Writes a dataset so that `load_csv` with the same schema reproduces it.
inline void write_csv(const Dataset& d, std::ostream& out) {
  csv::Row header;
  if (!d.row_ids.empty()) header.push_back("row_id");
  for (const auto& c : d.columns) {
    if (c.kind == Kind::right_censored) {
      header.push_back(c.time_field.empty() ? c.name + "_time" : c.time_field);
      header.push_back(c.event_field.empty() ? c.name + "_event" : c.event_field);
    } else {
      header.push_back(c.name);
    }
  }
  csv::write_row(out, header);
  for (std::size_t i = 0; i < d.n(); ++i) {
    csv::Row row;
    if (!d.row_ids.empty()) row.push_back(d.row_ids[i]);
    for (const auto& c : d.columns) {
      if (c.missing(i)) {
        row.push_back("NA");
        if (c.kind == Kind::right_censored) row.push_back("NA");
        continue;
      }
      switch (c.kind) {
        case Kind::ordinal: row.push_back(c.levels[static_cast<std::size_t>(c.values[i])]); break;
        case Kind::right_censored:
          row.push_back(format_double(c.values[i]));
          row.push_back(std::to_string(c.events[i]));
          break;
        default: row.push_back(format_double(c.values[i]));
      }
    }
    csv::write_row(out, row);
  }
}

struct CompleteCases {
  Dataset data;
  std::size_t removed = 0;
};

/// Listwise deletion over `cols`.
inline CompleteCases complete_cases(const Dataset& d, const std::vector<std::string>& cols) {
  std::vector<const Column*> used;
  for (const auto& name : cols) used.push_back(&d.column(name));
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < d.n(); ++i)
    if (std::none_of(used.begin(), used.end(), [&](const Column* c) { return c->missing(i); }))
      keep.push_back(i);
  if (keep.empty()) throw UserError("complete_cases: every row has a missing value");
  return {d.subset(keep), d.n() - keep.size()};
}

// ---------------------------------------------------------------------------
// Restricted cubic splines

/// Default knot quantiles for k = 3..7 knots.
inline std::vector<double> default_knot_quantiles(int k) {
  switch (k) {
    case 3: return {0.10, 0.50, 0.90};
    case 4: return {0.05, 0.35, 0.65, 0.95};
    case 5: return {0.05, 0.275, 0.50, 0.725, 0.95};
    case 6: return {0.05, 0.23, 0.41, 0.59, 0.77, 0.95};
    case 7: return {0.025, 0.1833, 0.3417, 0.50, 0.6583, 0.8167, 0.975};
  }
  throw UserError("rcs: default knots are defined for 3 to 7 knots, got " + std::to_string(k));
}

inline std::vector<double> default_knots(std::span<const double> x, int k) {
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  std::set<double> distinct(sorted.begin(), sorted.end());
  require(static_cast<int>(distinct.size()) >= k,
          "rcs: need at least " + std::to_string(k) + " distinct values");
  std::vector<double> knots;
  for (double q : default_knot_quantiles(k)) knots.push_back(stats::quantile_sorted(sorted, q));
  for (std::size_t j = 1; j < knots.size(); ++j)
    require(knots[j] > knots[j - 1], "rcs: quantile knots are tied; too few distinct values");
  return knots;
}

/// Restricted cubic spline basis: column 0 is x, columns 1..k-2 are the
/// truncated-power nonlinear terms, normalized by (t_k - t_1)^2. Each
/// nonlinear term is linear beyond the boundary knots.
inline Eigen::MatrixXd rcs_basis(std::span<const double> x, int k,
                                 std::optional<std::vector<double>> knots = std::nullopt) {
  require(k >= 3, "rcs: knot count must be at least 3");
  std::vector<double> t = knots ? *knots : default_knots(x, k);
  require(static_cast<int>(t.size()) == k, "rcs: expected " + std::to_string(k) + " knots");
  for (std::size_t j = 1; j < t.size(); ++j)
    require(t[j] > t[j - 1], "rcs: knots must be strictly increasing");
  if (knots) {
    std::set<double> distinct(x.begin(), x.end());
    require(static_cast<int>(distinct.size()) >= k,
            "rcs: need at least " + std::to_string(k) + " distinct values");
  }
  const double tk = t[k - 1], tk1 = t[k - 2];
  const double norm = (tk - t[0]) * (tk - t[0]);
  auto cube = [](double v) { return v > 0.0 ? v * v * v : 0.0; };
  Eigen::MatrixXd out(x.size(), k - 1);
  for (std::size_t i = 0; i < x.size(); ++i) {
    out(i, 0) = x[i];
    for (int j = 0; j < k - 2; ++j) {
      double v = cube(x[i] - t[j]) - cube(x[i] - tk1) * (tk - t[j]) / (tk - tk1) +
                 cube(x[i] - tk) * (tk1 - t[j]) / (tk - tk1);
      out(i, j + 1) = v / norm;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Design matrices

enum class TermKind { linear, log, power, rcs, categorical };

struct Term {
  TermKind kind = TermKind::linear;
  std::string column;
  int arg = 0;  // power exponent or knot count
  std::optional<std::vector<double>> knots;

  static Term linear(std::string c) { return {TermKind::linear, std::move(c), 0, {}}; }
  static Term log(std::string c) { return {TermKind::log, std::move(c), 0, {}}; }
  static Term power(std::string c, int d) { return {TermKind::power, std::move(c), d, {}}; }
  static Term rcs(std::string c, int k) { return {TermKind::rcs, std::move(c), k, {}}; }
  static Term categorical(std::string c) { return {TermKind::categorical, std::move(c), 0, {}}; }
};

/// Regressors without an intercept column; fitters that need one add it.
struct DesignMatrix {
  Eigen::MatrixXd matrix;
  std::vector<std::string> term_names;
  std::vector<std::string> source_columns;

  std::size_t n() const { return static_cast<std::size_t>(matrix.rows()); }
  std::size_t p() const { return static_cast<std::size_t>(matrix.cols()); }

  static DesignMatrix empty(std::size_t n) {
    DesignMatrix x;
    x.matrix.resize(static_cast<Eigen::Index>(n), 0);
    return x;
  }

  DesignMatrix subset(std::span<const std::size_t> rows) const {
    DesignMatrix x;
    x.term_names = term_names;
    x.source_columns = source_columns;
    x.matrix.resize(static_cast<Eigen::Index>(rows.size()), matrix.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) x.matrix.row(i) = matrix.row(rows[i]);
    return x;
  }
};

/// Numerical rank of [1 | X].
inline Eigen::Index rank_with_intercept(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd a(x.rows(), x.cols() + 1);
  a.col(0).setOnes();
  a.rightCols(x.cols()) = x;
  // Column scaling so the rank threshold is unit-free.
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    double s = a.col(j).norm();
    if (s > 0) a.col(j) /= s;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-10);
  return qr.rank();
}

inline DesignMatrix build_design(const Dataset& d, const std::vector<Term>& terms) {
  const std::size_t n = d.n();
  std::vector<std::vector<double>> cols;
  DesignMatrix out;
  auto push = [&](std::vector<double> v, std::string name, const std::string& src) {
    cols.push_back(std::move(v));
    out.term_names.push_back(std::move(name));
    out.source_columns.push_back(src);
  };
  for (const auto& term : terms) {
    const Column& c = d.column(term.column);
    for (std::size_t i = 0; i < n; ++i)
      require(!c.missing(i), "column '" + c.name +
                                 "' has missing values; take complete cases before modelling");
    require(c.kind != Kind::right_censored,
            "censored column '" + c.name + "' cannot be used as a regressor");
    bool categorical = term.kind == TermKind::categorical ||
                       (term.kind == TermKind::linear && c.kind == Kind::ordinal);
    if (categorical) {
      std::set<double> observed(c.values.begin(), c.values.end());
      require(observed.size() >= 2,
              "categorical term '" + c.name + "' needs at least two observed levels");
      auto it = observed.begin();
      for (++it; it != observed.end(); ++it) {
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = c.values[i] == *it ? 1.0 : 0.0;
        std::string label = c.kind == Kind::ordinal ? c.levels[static_cast<std::size_t>(*it)]
                                                    : format_double(*it);
        push(std::move(v), c.name + "=" + label, c.name);
      }
      continue;
    }
    switch (term.kind) {
      case TermKind::linear: push(c.values, c.name, c.name); break;
      case TermKind::log: {
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) {
          require(c.values[i] > 0.0, "log(" + c.name + "): nonpositive value");
          v[i] = std::log(c.values[i]);
        }
        push(std::move(v), "log(" + c.name + ")", c.name);
        break;
      }
      case TermKind::power: {
        require(term.arg >= 1, "power term needs a positive exponent");
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = std::pow(c.values[i], term.arg);
        push(std::move(v), c.name + "^" + std::to_string(term.arg), c.name);
        break;
      }
      case TermKind::rcs: {
        auto basis = rcs_basis(c.values, term.arg, term.knots);
        for (Eigen::Index j = 0; j < basis.cols(); ++j) {
          std::vector<double> v(basis.col(j).data(), basis.col(j).data() + n);
          push(std::move(v), j == 0 ? c.name : c.name + std::string(j, '\''), c.name);
        }
        break;
      }
      case TermKind::categorical: break;
    }
  }
  out.matrix.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j)
    for (std::size_t i = 0; i < n; ++i) {
      require(std::isfinite(cols[j][i]), "design column '" + out.term_names[j] +
                                             "' has a non-finite entry");
      out.matrix(i, j) = cols[j][i];
    }
  for (std::size_t j = 0; j < cols.size(); ++j) {
    auto [lo, hi] = std::minmax_element(cols[j].begin(), cols[j].end());
    require(*lo != *hi, "rank deficiency: design column '" + out.term_names[j] +
                            "' is constant");
  }
  if (!cols.empty() && rank_with_intercept(out.matrix) < out.matrix.cols() + 1)
    throw UserError("rank deficiency: design columns are exactly collinear");
  return out;
}

}  // namespace psrkit
