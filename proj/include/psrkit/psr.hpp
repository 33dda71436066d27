#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "data_model.hpp"
#include "estimators.hpp"
#include "fitted_dist.hpp"
#include "stats.hpp"

namespace psrkit {

/// Probability-scale residuals aligned with dataset rows.
struct PsrVector {
  std::vector<double> values;
  std::string source;

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
};

/// r(y, F) = F(y-) + F(y) - 1 = P(Y* < y) - P(Y* > y).
inline double psr(double y, const FittedDistribution& f) {
  double r = f.cdf_left(y) + f.cdf(y) - 1.0;
  assert(r >= -1.0 && r <= 1.0);
  return r;
}

/// Right-censored form F(y) - delta * (1 - F(y-)); equals psr() when delta = 1.
inline double psr_censored(double y, int delta, const FittedDistribution& f) {
  require(delta == 0 || delta == 1, "psr_censored: delta must be 0 or 1");
  if (delta == 1) return psr(y, f);
  double r = f.cdf(y);
  assert(r >= 0.0 && r <= 1.0);
  return r;
}

/// PSR against the empirical distribution of the residuals themselves:
/// (#{e_j < e_i} - #{e_j > e_i}) / n.
inline PsrVector psr_from_omers(std::span<const double> residuals) {
  require(!residuals.empty(), "psr_from_omers: no residuals");
  std::vector<double> sorted(residuals.begin(), residuals.end());
  for (double e : sorted) require(std::isfinite(e), "psr_from_omers: non-finite residual");
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  PsrVector out;
  out.source = "empirical-omer";
  out.values.reserve(residuals.size());
  for (double e : residuals) {
    auto below = std::lower_bound(sorted.begin(), sorted.end(), e) - sorted.begin();
    auto above = sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), e);
    out.values.push_back(static_cast<double>(below - above) / n);
  }
  return out;
}

/// Per-row PSRs for a fit; censored outcomes use the censored form.
inline PsrVector psr_all(const ModelFit& fit, const Column& y, const DesignMatrix& x) {
  require(y.size() == x.n(), "psr_all: outcome and design row counts differ");
  require(x.p() == fit.p(), "psr_all: design has " + std::to_string(x.p()) +
                                " columns, fit expects " + std::to_string(fit.p()));
  require((y.kind == Kind::right_censored) == (fit.family == Family::exponential_survival),
          "psr_all: outcome kind does not match the fitted family");
  for (std::size_t i = 0; i < y.size(); ++i)
    require(!y.missing(i), "psr_all: outcome has missing values");
  PsrVector out;
  out.source = fit.link_tag();
  const std::size_t n = y.size();
  out.values.resize(n);

  if (fit.family == Family::linear_empirical) {
    bool same_rows = fit.residuals.size() == n;
    std::vector<double> e(n);
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::VectorXd r = x.matrix.row(static_cast<Eigen::Index>(i)).transpose();
      e[i] = y.values[i] - (fit.alpha[0] + fit.linear_predictor({r.data(), fit.p()}));
      same_rows = same_rows && e[i] == fit.residuals[i];
    }
    if (same_rows) {
      out.values = psr_from_omers(e).values;
      return out;
    }
  }

  // Cumulative-link and empirical fits: the observed value's own category
  // gives both CDF terms directly. Arithmetic matches predict_distribution.
  const bool categorical =
      fit.family == Family::cumulative_link || fit.family == Family::empirical;
  Eigen::VectorXd row(static_cast<Eigen::Index>(fit.p()));
  for (std::size_t i = 0; i < n; ++i) {
    const double yi = y.values[i];
    if (categorical) {
      auto it = std::lower_bound(fit.support.begin(), fit.support.end(), yi);
      if (it != fit.support.end() && *it == yi) {
        const auto k = static_cast<std::size_t>(it - fit.support.begin());
        double upper, lower;
        if (fit.family == Family::empirical) {
          upper = fit.cum_probs[k];
          lower = k ? fit.cum_probs[k - 1] : 0.0;
        } else {
          row = x.matrix.row(static_cast<Eigen::Index>(i)).transpose();
          double eta = fit.linear_predictor({row.data(), fit.p()});
          const auto m = static_cast<std::size_t>(fit.alpha.size());
          upper = k < m ? link::cdf(fit.link, fit.alpha[k] - eta) : 1.0;
          lower = k ? link::cdf(fit.link, fit.alpha[k - 1] - eta) : 0.0;
        }
        out.values[i] = lower + upper - 1.0;
        continue;
      }
    }
    auto f = predict_distribution(fit, x, i);
    out.values[i] = y.kind == Kind::right_censored ? psr_censored(yi, y.events[i], f) : psr(yi, f);
  }
  return out;
}

/// Phi^-1((r + 1) / 2). Residuals of exactly +-1 map to +-infinity; the
/// count of such values is appended to `warnings` when provided.
inline std::vector<double> normal_transform(const PsrVector& p,
                                            std::vector<std::string>* warnings = nullptr) {
  std::vector<double> out;
  out.reserve(p.size());
  std::size_t saturated = 0;
  for (double r : p.values) {
    if (r <= -1.0 || r >= 1.0) ++saturated;
    out.push_back(stats::normal_quantile((r + 1.0) / 2.0));
  }
  if (saturated && warnings)
    warnings->push_back(std::to_string(saturated) +
                        " residual(s) at +-1 mapped to infinite normal scores");
  return out;
}

}  // namespace psrkit
