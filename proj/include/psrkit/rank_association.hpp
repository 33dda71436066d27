#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "data_model.hpp"
#include "error.hpp"
#include "estimators.hpp"
#include "psr.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace psrkit {

enum class AssocMethod { spearman, partial_spearman, conditional_spearman, psr_covariance };

inline const char* method_name(AssocMethod m) {
  switch (m) {
    case AssocMethod::spearman: return "spearman";
    case AssocMethod::partial_spearman: return "partial_spearman";
    case AssocMethod::conditional_spearman: return "conditional_spearman";
    case AssocMethod::psr_covariance: return "psr_covariance";
  }
  return "?";
}

/// Pairs-bootstrap percentile interval and permutation p-value settings.
/// A count of zero disables that part of the inference.
struct Resampling {
  std::size_t bootstrap = 0;
  std::size_t permutations = 0;
  std::uint64_t seed = 0;
  double ci_level = 0.95;
};

struct AssocResult {
  double estimate = stats::kNaN;
  double ci_low = stats::kNaN;
  double ci_high = stats::kNaN;
  double p_value = stats::kNaN;
  AssocMethod method = AssocMethod::spearman;
  std::size_t n_used = 0;
  Resampling resampling;
  std::size_t bootstrap_failures = 0;
  std::vector<std::string> warnings;
};

/// Which model supplies the PSRs of one margin.
struct FitterSpec {
  enum class Kind { empirical, linear, linear_empirical, orm, poisson, exp_surv };
  Kind kind = Kind::orm;
  Link link = Link::logit;

  static FitterSpec orm(Link l = Link::logit) { return {Kind::orm, l}; }
  static FitterSpec empirical() { return {Kind::empirical, Link::logit}; }

  static FitterSpec parse(const std::string& s) {
    if (s == "empirical") return {Kind::empirical, Link::logit};
    if (s == "linear") return {Kind::linear, Link::logit};
    if (s == "linear-empirical") return {Kind::linear_empirical, Link::logit};
    if (s == "poisson") return {Kind::poisson, Link::logit};
    if (s == "exp-surv") return {Kind::exp_surv, Link::logit};
    if (s.starts_with("orm-")) return {Kind::orm, parse_link(s.substr(4))};
    if (s == "orm") return {Kind::orm, Link::logit};
    throw UserError("unknown model '" + s +
                    "' (expected empirical|linear|linear-empirical|orm-<link>|poisson|exp-surv)");
  }

  std::string name() const {
    switch (kind) {
      case Kind::empirical: return "empirical";
      case Kind::linear: return "linear";
      case Kind::linear_empirical: return "linear-empirical";
      case Kind::orm: return std::string("orm-") + link_name(link);
      case Kind::poisson: return "poisson";
      case Kind::exp_surv: return "exp-surv";
    }
    return "?";
  }

  bool rank_based() const { return kind == Kind::orm || kind == Kind::empirical; }
};

/// Fits `spec` of y on x. Rank-based specs with no regressors use the
/// empirical fit, which is the closed-form maximum-likelihood solution.
inline ModelFit fit_with(const FitterSpec& spec, const Column& y, const DesignMatrix& x) {
  if (spec.rank_based() && x.p() == 0) return fit_empirical(y);
  switch (spec.kind) {
    case FitterSpec::Kind::empirical:
      throw UserError("empirical model takes no covariates");
    case FitterSpec::Kind::linear: return fit_linear_normal(y, x);
    case FitterSpec::Kind::linear_empirical: return fit_linear_empirical(y, x);
    case FitterSpec::Kind::orm: return fit_cumulative_link(y, x, spec.link);
    case FitterSpec::Kind::poisson: return fit_poisson(y, x);
    case FitterSpec::Kind::exp_surv: return fit_exponential_survival(y, x);
  }
  throw UserError("unknown model");
}

/// Fit plus residuals; throws NumericalError when the fit is unusable.
inline PsrVector model_psr(const FitterSpec& spec, const Column& y, const DesignMatrix& x) {
  ModelFit fit = fit_with(spec, y, x);
  if (!fit.usable())
    throw NumericalError("model " + spec.name() + " for '" + y.name +
                         "' did not converge (gradient max-norm " +
                         std::to_string(fit.gradient_norm) + ")");
  return psr_all(fit, y, x);
}

inline double mean_product(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s / static_cast<double>(a.size());
}

/// (1 - sum f^3) / 3, the variance of the PSR of a discrete variable under
/// its own distribution.
inline double psr_variance_discrete(std::span<const double> f) {
  require(!f.empty(), "psr_variance_discrete: empty probability vector");
  double s = 0.0, cube = 0.0;
  for (double x : f) {
    require(x >= 0.0 && std::isfinite(x), "psr_variance_discrete: negative probability");
    s += x;
    cube += x * x * x;
  }
  require(std::abs(s - 1.0) <= 1e-12, "psr_variance_discrete: probabilities must sum to 1");
  return (1.0 - cube) / 3.0;
}

namespace detail {

using Statistic = std::function<double(std::span<const double>, std::span<const double>)>;

inline double pearson_stat(std::span<const double> a, std::span<const double> b) {
  return stats::pearson(a, b);
}

// Permutation p-value: permutes `b` against fixed `a`; two-sided.
inline double permutation_p(std::span<const double> a, std::span<const double> b,
                            double observed, const Statistic& stat, std::size_t perms,
                            std::mt19937_64 gen) {
  std::vector<double> shuffled(b.begin(), b.end());
  std::size_t extreme = 0;
  const double cut = std::abs(observed) * (1.0 - 1e-12);
  for (std::size_t r = 0; r < perms; ++r) {
    shuffle_in_place(shuffled, gen);
    double s = stat(a, shuffled);
    if (std::abs(s) >= cut) ++extreme;
  }
  return (1.0 + static_cast<double>(extreme)) / (static_cast<double>(perms) + 1.0);
}

inline std::pair<double, double> percentile_interval(std::vector<double> draws, double level) {
  if (draws.empty()) return {stats::kNaN, stats::kNaN};
  std::sort(draws.begin(), draws.end());
  double tail = (1.0 - level) / 2.0;
  return {stats::quantile_sorted(draws, tail), stats::quantile_sorted(draws, 1.0 - tail)};
}

inline std::vector<std::size_t> bootstrap_rows(std::size_t n, std::mt19937_64& gen) {
  std::vector<std::size_t> rows(n);
  for (auto& r : rows) r = uniform_index(gen, n);
  return rows;
}

// Shared estimate + inference for statistics of two PSR vectors.
inline AssocResult psr_pair_inference(const Column& x, const Column& y, const DesignMatrix& z,
                                      const FitterSpec& x_model, const FitterSpec& y_model,
                                      const Resampling& rs, const Statistic& stat,
                                      AssocMethod method) {
  require(x.size() == y.size() && x.size() == z.n(), "association: row counts differ");
  auto rx = model_psr(x_model, x, z);
  auto ry = model_psr(y_model, y, z);
  AssocResult res;
  res.method = method;
  res.n_used = x.size();
  res.resampling = rs;
  res.estimate = stat(rx.values, ry.values);
  if (std::isnan(res.estimate))
    throw NumericalError("association of '" + x.name + "' and '" + y.name +
                         "' is undefined: a residual vector is constant");

  if (rs.bootstrap > 0) {
    auto gen = substream(rs.seed, "bootstrap");
    std::vector<double> draws;
    for (std::size_t b = 0; b < rs.bootstrap; ++b) {
      auto rows = bootstrap_rows(x.size(), gen);
      try {
        auto zb = z.p() ? z.subset(rows) : DesignMatrix::empty(rows.size());
        auto bx = model_psr(x_model, x.subset(rows), zb);
        auto by = model_psr(y_model, y.subset(rows), zb);
        double s = stat(bx.values, by.values);
        if (std::isnan(s)) {
          ++res.bootstrap_failures;
          continue;
        }
        draws.push_back(s);
      } catch (const std::exception&) {
        ++res.bootstrap_failures;
      }
    }
    std::tie(res.ci_low, res.ci_high) = percentile_interval(std::move(draws), rs.ci_level);
    // A skewed bootstrap distribution can leave the estimate outside the
    // percentile interval; the reported interval always covers it.
    if (!std::isnan(res.ci_low)) {
      res.ci_low = std::min(res.ci_low, res.estimate);
      res.ci_high = std::max(res.ci_high, res.estimate);
    }
    if (res.bootstrap_failures)
      res.warnings.push_back(std::to_string(res.bootstrap_failures) +
                             " bootstrap replicate(s) failed to fit and were dropped");
  }
  if (rs.permutations > 0)
    res.p_value = permutation_p(rx.values, ry.values, res.estimate, stat, rs.permutations,
                                substream(rs.seed, "permutation"));
  if (rs.bootstrap > 0 || rs.permutations > 0)
    res.warnings.push_back("inference by resampling (pairs bootstrap percentile CI, permutation p)");
  return res;
}

}  // namespace detail

/// Spearman's rank correlation as the correlation of PSRs from
/// intercept-only empirical fits; ties are handled by the PSR itself.
inline AssocResult spearman(const Column& x, const Column& y, const Resampling& rs = {}) {
  require(x.size() == y.size(), "spearman: columns differ in length");
  require(x.size() >= 3, "spearman: need at least 3 observations");
  require(x.orderable() && y.orderable(), "spearman: columns must be orderable");
  return detail::psr_pair_inference(x, y, DesignMatrix::empty(x.size()), FitterSpec::empirical(),
                                    FitterSpec::empirical(), rs, detail::pearson_stat,
                                    AssocMethod::spearman);
}

/// Partial Spearman correlation: correlation of PSRs from models of x on Z
/// and y on Z. With no columns in Z and rank-based models this is spearman().
inline AssocResult partial_spearman(const Column& x, const Column& y, const DesignMatrix& z,
                                    const FitterSpec& x_model = FitterSpec::orm(),
                                    const FitterSpec& y_model = FitterSpec::orm(),
                                    const Resampling& rs = {}) {
  require(x.size() >= 3, "partial_spearman: need at least 3 observations");
  return detail::psr_pair_inference(x, y, z, x_model, y_model, rs, detail::pearson_stat,
                                    AssocMethod::partial_spearman);
}

/// Mean of the product of the two PSR vectors.
inline AssocResult psr_covariance(const Column& x, const Column& y, const DesignMatrix& z,
                                  const FitterSpec& x_model = FitterSpec::orm(),
                                  const FitterSpec& y_model = FitterSpec::orm(),
                                  const Resampling& rs = {}) {
  auto stat = [](std::span<const double> a, std::span<const double> b) {
    return mean_product(a, b);
  };
  return detail::psr_pair_inference(x, y, z, x_model, y_model, rs, stat,
                                    AssocMethod::psr_covariance);
}

// ---------------------------------------------------------------------------
// Conditional Spearman

struct ConditionalConfig {
  std::optional<double> bandwidth;    // continuous z; default Silverman's rule
  std::optional<bool> categorical;    // default: ordinal/binary z are categorical
  std::size_t grid_points = 50;
  std::size_t min_stratum = 5;
  std::size_t min_continuous_n = 30;
  FitterSpec x_model = FitterSpec::orm();
  FitterSpec y_model = FitterSpec::orm();
  Resampling resampling;
};

struct ConditionalPoint {
  double z = stats::kNaN;
  std::string label;  // level label for categorical z
  AssocResult result;
};

inline double silverman_bandwidth(std::span<const double> z) {
  std::vector<double> s(z.begin(), z.end());
  std::sort(s.begin(), s.end());
  double sd = stats::sd(z);
  double iqr = stats::quantile_sorted(s, 0.75) - stats::quantile_sorted(s, 0.25);
  double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  return 0.9 * spread * std::pow(static_cast<double>(z.size()), -0.2);
}

/// Rank correlation as a function of z. Categorical z: the correlation of
/// PSRs within each level, each margin's conditional distribution estimated
/// nonparametrically in that level. Continuous z: Gaussian-kernel-weighted
/// correlation of PSRs from models of x on z and y on z, on an equally
/// spaced grid over the range of z.
inline std::vector<ConditionalPoint> conditional_spearman(const Column& x, const Column& y,
                                                          const Column& z,
                                                          const ConditionalConfig& cfg = {}) {
  require(x.size() == y.size() && x.size() == z.size(), "conditional_spearman: row counts differ");
  for (std::size_t i = 0; i < z.size(); ++i)
    require(!z.missing(i), "conditional_spearman: z has missing values");
  bool categorical = cfg.categorical.value_or(z.kind == Kind::ordinal || z.kind == Kind::binary);
  std::vector<ConditionalPoint> out;

  if (categorical) {
    std::set<double> levels(z.values.begin(), z.values.end());
    std::size_t index = 0;
    for (double lv : levels) {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < z.size(); ++i)
        if (z.values[i] == lv) rows.push_back(i);
      std::string label = z.kind == Kind::ordinal ? z.levels[static_cast<std::size_t>(lv)]
                                                  : format_double(lv);
      if (rows.size() < cfg.min_stratum)
        throw UserError("conditional_spearman: stratum " + z.name + "=" + label + " has " +
                        std::to_string(rows.size()) + " rows, need at least " +
                        std::to_string(cfg.min_stratum));
      Resampling rs = cfg.resampling;
      rs.seed = splitmix64(cfg.resampling.seed ^ splitmix64(index++));
      auto r = partial_spearman(x.subset(rows), y.subset(rows), DesignMatrix::empty(rows.size()),
                                cfg.x_model, cfg.y_model, rs);
      r.method = AssocMethod::conditional_spearman;
      r.resampling.seed = cfg.resampling.seed;
      out.push_back({lv, label, std::move(r)});
    }
    return out;
  }

  const std::size_t n = z.size();
  require(n >= cfg.min_continuous_n, "conditional_spearman: continuous z needs at least " +
                                         std::to_string(cfg.min_continuous_n) + " rows");
  double h = cfg.bandwidth ? *cfg.bandwidth : silverman_bandwidth(z.values);
  require(h > 0.0 && std::isfinite(h), "conditional_spearman: bandwidth must be positive");
  require(cfg.grid_points >= 2, "conditional_spearman: grid needs at least 2 points");

  Dataset zd;
  zd.add(Column::continuous(z.name, z.values));
  DesignMatrix zx = build_design(zd, {Term::linear(z.name)});
  auto [zmin, zmax] = std::minmax_element(z.values.begin(), z.values.end());
  std::vector<double> grid(cfg.grid_points);
  for (std::size_t g = 0; g < grid.size(); ++g)
    grid[g] = *zmin + (*zmax - *zmin) * static_cast<double>(g) / (grid.size() - 1.0);
  std::vector<std::vector<double>> weights(grid.size(), std::vector<double>(n));
  for (std::size_t g = 0; g < grid.size(); ++g)
    for (std::size_t i = 0; i < n; ++i) weights[g][i] = stats::normal_pdf((z.values[i] - grid[g]) / h);

  auto curve = [&](const std::vector<double>& zv, std::span<const double> a,
                   std::span<const double> b) {
    std::vector<double> c(grid.size());
    std::vector<double> w(zv.size());
    for (std::size_t g = 0; g < grid.size(); ++g) {
      for (std::size_t i = 0; i < zv.size(); ++i) w[i] = stats::normal_pdf((zv[i] - grid[g]) / h);
      c[g] = stats::weighted_pearson(a, b, w);
    }
    return c;
  };

  auto rx = model_psr(cfg.x_model, x, zx);
  auto ry = model_psr(cfg.y_model, y, zx);
  auto est = curve(z.values, rx.values, ry.values);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    ConditionalPoint pt;
    pt.z = grid[g];
    pt.result.estimate = est[g];
    pt.result.method = AssocMethod::conditional_spearman;
    pt.result.n_used = n;
    pt.result.resampling = cfg.resampling;
    pt.result.warnings.push_back("bandwidth " + format_double(h));
    out.push_back(std::move(pt));
  }

  const auto& rs = cfg.resampling;
  if (rs.bootstrap > 0) {
    auto gen = substream(rs.seed, "bootstrap");
    std::vector<std::vector<double>> draws(grid.size());
    std::size_t failures = 0;
    for (std::size_t b = 0; b < rs.bootstrap; ++b) {
      auto rows = detail::bootstrap_rows(n, gen);
      try {
        auto zb = zx.subset(rows);
        auto bx = model_psr(cfg.x_model, x.subset(rows), zb);
        auto by = model_psr(cfg.y_model, y.subset(rows), zb);
        std::vector<double> zv(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) zv[i] = z.values[rows[i]];
        auto c = curve(zv, bx.values, by.values);
        for (std::size_t g = 0; g < grid.size(); ++g)
          if (!std::isnan(c[g])) draws[g].push_back(c[g]);
      } catch (const std::exception&) {
        ++failures;
      }
    }
    for (std::size_t g = 0; g < grid.size(); ++g) {
      std::tie(out[g].result.ci_low, out[g].result.ci_high) =
          detail::percentile_interval(std::move(draws[g]), rs.ci_level);
      auto& r = out[g].result;
      if (!std::isnan(r.ci_low) && !std::isnan(r.estimate)) {
        r.ci_low = std::min(r.ci_low, r.estimate);
        r.ci_high = std::max(r.ci_high, r.estimate);
      }
      r.bootstrap_failures = failures;
    }
  }
  if (rs.permutations > 0) {
    auto gen = substream(rs.seed, "permutation");
    std::vector<double> shuffled = ry.values;
    std::vector<std::size_t> extreme(grid.size(), 0);
    for (std::size_t r = 0; r < rs.permutations; ++r) {
      shuffle_in_place(shuffled, gen);
      for (std::size_t g = 0; g < grid.size(); ++g) {
        double s = stats::weighted_pearson(rx.values, shuffled, weights[g]);
        if (std::abs(s) >= std::abs(est[g]) * (1.0 - 1e-12)) ++extreme[g];
      }
    }
    for (std::size_t g = 0; g < grid.size(); ++g)
      out[g].result.p_value = (1.0 + extreme[g]) / (rs.permutations + 1.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batch scan

struct BatchConfig {
  FitterSpec y_model{FitterSpec::Kind::linear_empirical, Link::logit};
  Link predictor_link = Link::logit;
  std::size_t permutations = 1000;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct BatchRow {
  std::string name;
  double estimate = stats::kNaN;
  double p_value = stats::kNaN;
  std::size_t n_used = 0;
  std::string status = "ok";  // ok | degenerate: ... | failed: ...
};

/// Partial Spearman of y with each predictor given Z. The y residuals are
/// computed once; each predictor gets a cumulative-link fit on Z, and its
/// permutation stream depends only on (seed, predictor index), so results
/// do not depend on the thread count. Output is in input order.
inline std::vector<BatchRow> batch_partial_spearman(const Column& y, const DesignMatrix& z,
                                                    const std::vector<Column>& predictors,
                                                    const BatchConfig& cfg) {
  require(cfg.threads >= 1, "batch scan: threads must be at least 1");
  const auto ry = model_psr(cfg.y_model, y, z);  // failure aborts the scan
  const std::size_t n = y.size();
  double my = stats::mean(ry.values);
  std::vector<double> cy(n);
  double syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cy[i] = ry.values[i] - my;
    syy += cy[i] * cy[i];
  }
  require(syy > 0.0, "batch scan: outcome residuals are constant");

  std::vector<BatchRow> rows(predictors.size());
  auto work = [&](std::size_t j) {
    const Column& c = predictors[j];
    BatchRow& row = rows[j];
    row.name = c.name;
    row.n_used = n;
    try {
      require(c.size() == n, "predictor length differs from outcome");
      std::set<double> levels;
      for (std::size_t i = 0; i < n; ++i) {
        require(!c.missing(i), "predictor has missing values");
        levels.insert(c.values[i]);
      }
      if (levels.size() < 2) {
        row.status = "degenerate: fewer than two observed levels";
        return;
      }
      ModelFit fit = z.p() ? fit_cumulative_link(c, z, cfg.predictor_link) : fit_empirical(c);
      if (fit.status == FitStatus::separated) {
        row.status = "degenerate: predictor is determined by covariates";
        return;
      }
      if (!fit.usable()) {
        row.status = "failed: predictor model did not converge";
        return;
      }
      auto rx = psr_all(fit, c, z);
      double mx = stats::mean(rx.values);
      std::vector<double> cx(n);
      double sxx = 0.0, sxy = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        cx[i] = rx.values[i] - mx;
        sxx += cx[i] * cx[i];
        sxy += cx[i] * cy[i];
      }
      if (!(sxx > 1e-20 * n)) {
        row.status = "degenerate: predictor residuals are constant";
        return;
      }
      const double denom = std::sqrt(sxx * syy);
      row.estimate = std::clamp(sxy / denom, -1.0, 1.0);
      if (cfg.permutations > 0) {
        auto gen = substream(cfg.seed, "scan", j);
        std::vector<double> shuffled = cy;
        std::size_t extreme = 0;
        const double cut = std::abs(sxy) * (1.0 - 1e-12);
        for (std::size_t r = 0; r < cfg.permutations; ++r) {
          shuffle_in_place(shuffled, gen);
          double s = 0.0;
          for (std::size_t i = 0; i < n; ++i) s += cx[i] * shuffled[i];
          if (std::abs(s) >= cut) ++extreme;
        }
        row.p_value = (1.0 + extreme) / (cfg.permutations + 1.0);
      }
    } catch (const std::exception& e) {
      row.status = std::string("failed: ") + e.what();
      row.estimate = stats::kNaN;
      row.p_value = stats::kNaN;
    }
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j; (j = next.fetch_add(1)) < predictors.size();) work(j);
  };
  const std::size_t nthreads = std::min(cfg.threads, std::max<std::size_t>(predictors.size(), 1));
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return rows;
}

/// Indices of `rows` ordered by p-value, then |estimate| (larger first), then
/// input order. Rows without a p-value go last.
inline std::vector<std::size_t> rank_by_p(const std::vector<BatchRow>& rows) {
  std::vector<std::size_t> idx(rows.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto& ra = rows[a];
    const auto& rb = rows[b];
    bool na = std::isnan(ra.p_value), nb = std::isnan(rb.p_value);
    if (na != nb) return nb;
    if (na) return false;
    if (ra.p_value != rb.p_value) return ra.p_value < rb.p_value;
    return std::abs(ra.estimate) > std::abs(rb.estimate);
  });
  return idx;
}

}  // namespace psrkit
