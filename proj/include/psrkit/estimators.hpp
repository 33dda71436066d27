#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "data_model.hpp"
#include "error.hpp"
#include "fitted_dist.hpp"
#include "links.hpp"
#include "stats.hpp"

namespace psrkit {

enum class Family {
  empirical,             // intercept-only, nonparametric CDF
  linear_normal,         // OLS, normal errors with ML sigma
  linear_empirical,      // OLS, errors from the pooled residual distribution
  cumulative_link,       // ordinal / semiparametric transformation model
  poisson,
  exponential_survival,
};

enum class FitStatus { converged, separated, max_iterations, stalled };

inline const char* status_name(FitStatus s) {
  switch (s) {
    case FitStatus::converged: return "converged";
    case FitStatus::separated: return "separated";
    case FitStatus::max_iterations: return "max_iterations";
    case FitStatus::stalled: return "stalled";
  }
  return "?";
}

struct FitOptions {
  int max_iter = 100;
  double gradient_tol = 1e-8;
  double separation_bound = 30.0;  // |beta| beyond this on the link scale
};

struct ModelFit {
  Family family = Family::empirical;
  Link link = Link::logit;  // cumulative_link only
  Eigen::VectorXd beta;     // slopes, aligned with design columns
  Eigen::VectorXd alpha;    // intercept(s)
  double sigma = stats::kNaN;
  double loglik = stats::kNaN;
  FitStatus status = FitStatus::converged;
  int iterations = 0;
  double gradient_norm = 0.0;
  std::size_t n = 0;
  std::vector<double> support;    // discrete families: outcome support
  std::vector<double> cum_probs;  // empirical only
  std::vector<double> residuals;  // linear families: OMERs y - yhat
  std::vector<std::string> term_names;
  std::vector<std::string> warnings;
  std::vector<double> loglik_trace;  // start value, then one entry per accepted step

  bool converged() const { return status == FitStatus::converged; }
  /// Usable for residuals: converged, or capped after separation.
  bool usable() const { return status == FitStatus::converged || status == FitStatus::separated; }

  std::size_t p() const { return static_cast<std::size_t>(beta.size()); }

  double aic() const { return -2.0 * loglik + 2.0 * static_cast<double>(p() + alpha.size()); }

  std::string link_tag() const {
    switch (family) {
      case Family::empirical: return "empirical";
      case Family::linear_normal: return "identity-normal";
      case Family::linear_empirical: return "identity-empirical";
      case Family::cumulative_link: return link_name(link);
      case Family::poisson: return "log-poisson";
      case Family::exponential_survival: return "log-exponential";
    }
    return "?";
  }

  double linear_predictor(std::span<const double> row) const {
    if (row.size() != p())
      throw UserError("design row has " + std::to_string(row.size()) + " entries, fit expects " +
                      std::to_string(p()));
    double eta = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) eta += row[j] * beta[j];
    return eta;
  }

  nlohmann::json summary() const {
    nlohmann::json coef = nlohmann::json::object();
    for (std::size_t j = 0; j < p(); ++j)
      coef[j < term_names.size() ? term_names[j] : "x" + std::to_string(j)] = beta[j];
    std::vector<double> a(alpha.data(), alpha.data() + alpha.size());
    nlohmann::json j = {{"link", link_tag()},
                        {"n", n},
                        {"coefficients", coef},
                        {"alpha", a},
                        {"loglik", loglik},
                        {"aic", aic()},
                        {"converged", converged()},
                        {"status", status_name(status)},
                        {"iterations", iterations},
                        {"gradient_max_norm", gradient_norm},
                        {"warnings", warnings}};
    if (family == Family::linear_normal) j["sigma"] = sigma;
    if (family == Family::cumulative_link || family == Family::empirical)
      j["support_size"] = support.size();
    return j;
  }
};

namespace detail {

inline std::vector<double> outcome_values(const Column& y) {
  for (std::size_t i = 0; i < y.size(); ++i)
    require(!y.missing(i), "outcome '" + y.name + "' has missing values; take complete cases first");
  return y.values;
}

inline std::vector<double> distinct_sorted(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

inline void check_rows(const Column& y, const DesignMatrix& x) {
  require(y.size() == x.n(), "outcome has " + std::to_string(y.size()) +
                                 " rows but design matrix has " + std::to_string(x.n()));
}

inline Eigen::MatrixXd with_intercept(const DesignMatrix& x) {
  Eigen::MatrixXd a(x.matrix.rows(), x.matrix.cols() + 1);
  a.col(0).setOnes();
  a.rightCols(x.matrix.cols()) = x.matrix;
  return a;
}

// Rounding noise of a summed log-likelihood. Near the optimum the predicted
// gain of a Newton step falls below it, and comparisons of log-likelihoods
// can no longer steer the line search.
inline double loglik_noise(double ll, std::size_t terms) {
  return 64.0 * std::numeric_limits<double>::epsilon() * (std::abs(ll) + static_cast<double>(terms));
}

// Accepts a trial point: a strict non-decrease, or a full Newton step whose
// predicted gain and observed change are both inside the rounding noise.
inline bool accept_step(double ll_new, double ll_old, double predicted_gain, double t,
                        double noise) {
  if (!std::isfinite(ll_new)) return false;
  if (ll_new >= ll_old) return true;
  return t == 1.0 && predicted_gain <= noise && ll_new >= ll_old - noise;
}

struct NewtonEval {
  double loglik;
  Eigen::VectorXd grad;
  Eigen::MatrixXd info;  // negative Hessian
};

struct NewtonResult {
  Eigen::VectorXd b;
  double loglik;
  FitStatus status;
  int iterations;
  double grad_norm;
  std::vector<double> trace;
};

// Newton-Raphson with step-halving for concave log-likelihoods with a dense
// information matrix (Poisson, exponential).
inline NewtonResult newton_maximize(Eigen::VectorXd b,
                                    const std::function<NewtonEval(const Eigen::VectorXd&)>& eval,
                                    const std::function<double(const Eigen::VectorXd&)>& loglik,
                                    const FitOptions& opt, std::size_t n_terms) {
  NewtonEval cur = eval(b);
  std::vector<double> trace{cur.loglik};
  int it = 0;
  for (; it < opt.max_iter; ++it) {
    double g = cur.grad.lpNorm<Eigen::Infinity>();
    if (g <= opt.gradient_tol) return {b, cur.loglik, FitStatus::converged, it, g, trace};
    Eigen::LDLT<Eigen::MatrixXd> ldlt(cur.info);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
      throw NumericalError("information matrix is not positive definite");
    Eigen::VectorXd step = ldlt.solve(cur.grad);
    double t = 1.0;
    bool moved = false;
    for (int h = 0; h < 40; ++h, t *= 0.5) {
      Eigen::VectorXd cand = b + t * step;
      double ll = loglik(cand);
      if (accept_step(ll, cur.loglik, cur.grad.dot(step), t, loglik_noise(cur.loglik, n_terms))) {
        b = cand;
        moved = true;
        break;
      }
    }
    if (!moved) return {b, cur.loglik, FitStatus::stalled, it, g, trace};
    cur = eval(b);
    trace.push_back(cur.loglik);
  }
  double g = cur.grad.lpNorm<Eigen::Infinity>();
  return {b, cur.loglik, g <= opt.gradient_tol ? FitStatus::converged : FitStatus::max_iterations,
          it, g, trace};
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// Intercept-only fit whose predicted distribution is the empirical CDF.
inline ModelFit fit_empirical(const Column& y) {
  require(y.orderable(), "fit_empirical: outcome must be orderable");
  auto v = detail::outcome_values(y);
  require(!v.empty(), "fit_empirical: empty outcome");
  ModelFit fit;
  fit.family = Family::empirical;
  fit.n = v.size();
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double ll = 0.0;
  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i;
    while (j < v.size() && v[j] == v[i]) ++j;
    fit.support.push_back(v[i]);
    fit.cum_probs.push_back(static_cast<double>(j) / n);
    ll += static_cast<double>(j - i) * std::log((j - i) / n);
    i = j;
  }
  fit.cum_probs.back() = 1.0;
  fit.loglik = ll;
  fit.alpha.resize(0);
  fit.beta.resize(0);
  return fit;
}

namespace detail {

inline ModelFit fit_ols(const Column& y, const DesignMatrix& x, Family family) {
  check_rows(y, x);
  require(y.kind == Kind::continuous || y.kind == Kind::count || y.kind == Kind::binary,
          "linear model: outcome must be numeric");
  auto v = outcome_values(y);
  const auto n = static_cast<Eigen::Index>(v.size());
  Eigen::MatrixXd a = with_intercept(x);
  require(n > a.cols(), "linear model: need more observations than parameters");
  require(rank_with_intercept(x.matrix) == a.cols(), "linear model: design is rank deficient");
  Eigen::Map<const Eigen::VectorXd> yv(v.data(), n);
  Eigen::VectorXd b = a.colPivHouseholderQr().solve(yv);
  Eigen::VectorXd fitted = a * b;
  ModelFit fit;
  fit.family = family;
  fit.n = v.size();
  fit.term_names = x.term_names;
  fit.alpha = b.head(1);
  fit.beta = b.tail(x.matrix.cols());
  fit.residuals.resize(v.size());
  double rss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    fit.residuals[i] = v[i] - fitted[i];
    rss += fit.residuals[i] * fit.residuals[i];
  }
  fit.sigma = std::sqrt(rss / static_cast<double>(n));
  double scale = std::max(1.0, std::sqrt(stats::variance(v)));
  if (!(fit.sigma > 1e-10 * scale))
    throw NumericalError("degenerate linear fit: residual variance is zero");
  fit.loglik = -0.5 * static_cast<double>(n) *
               (std::log(2.0 * std::numbers::pi * fit.sigma * fit.sigma) + 1.0);
  fit.iterations = 1;
  return fit;
}

}  // namespace detail

/// Least squares with the maximum-likelihood sigma (RSS / n).
inline ModelFit fit_linear_normal(const Column& y, const DesignMatrix& x) {
  return detail::fit_ols(y, x, Family::linear_normal);
}

/// Least squares; the fitted distribution of row i is the pooled residual
/// distribution shifted to its fitted value.
inline ModelFit fit_linear_empirical(const Column& y, const DesignMatrix& x) {
  return detail::fit_ols(y, x, Family::linear_empirical);
}

// ---------------------------------------------------------------------------
// Cumulative link models

namespace detail {

struct ClmData {
  Link link;
  std::vector<int> cat;          // category index 0..J-1 per row
  const Eigen::MatrixXd* x;
  std::size_t m;                 // number of intercepts, J - 1
};

// Log-likelihood, gradient, and negative Hessian of a cumulative-link model
// in (alpha, beta). The alpha block of the negative Hessian is tridiagonal.
struct ClmEval {
  double loglik = 0.0;
  Eigen::VectorXd grad;     // m + p
  Eigen::VectorXd diag;     // m
  Eigen::VectorXd off;      // m - 1, entry k couples alpha_k and alpha_{k+1}
  Eigen::MatrixXd cross;    // m x p
  Eigen::MatrixXd bb;       // p x p
};

inline ClmEval clm_evaluate(const ClmData& d, const Eigen::VectorXd& alpha,
                            const Eigen::VectorXd& beta, bool derivatives) {
  const auto p = beta.size();
  const auto m = static_cast<Eigen::Index>(d.m);
  ClmEval e;
  if (derivatives) {
    e.grad = Eigen::VectorXd::Zero(m + p);
    e.diag = Eigen::VectorXd::Zero(m);
    e.off = Eigen::VectorXd::Zero(std::max<Eigen::Index>(m - 1, 0));
    e.cross = Eigen::MatrixXd::Zero(m, p);
    e.bb = Eigen::MatrixXd::Zero(p, p);
  }
  const auto& x = *d.x;
  for (std::size_t i = 0; i < d.cat.size(); ++i) {
    const int k = d.cat[i];
    const double eta = p ? x.row(static_cast<Eigen::Index>(i)).dot(beta) : 0.0;
    const bool has_u = k < m, has_l = k > 0;
    const double u = has_u ? alpha[k] - eta : stats::kInf;
    const double l = has_l ? alpha[k - 1] - eta : -stats::kInf;
    const double prob = link::interval(d.link, l, u);
    if (!(prob > 0.0)) {
      e.loglik = -stats::kInf;
      return e;
    }
    e.loglik += std::log(prob);
    if (!derivatives) continue;
    const double fu = has_u ? link::pdf(d.link, u) : 0.0;
    const double fl = has_l ? link::pdf(d.link, l) : 0.0;
    const double dfu = has_u ? link::dpdf(d.link, u) : 0.0;
    const double dfl = has_l ? link::dpdf(d.link, l) : 0.0;
    const double lu = fu / prob, ll = -fl / prob;
    const double luu = dfu / prob - lu * lu;
    const double lll = -dfl / prob - ll * ll;
    const double lul = -lu * ll;  // fu fl / P^2
    if (has_u) {
      e.grad[k] += lu;
      e.diag[k] -= luu;
    }
    if (has_l) {
      e.grad[k - 1] += ll;
      e.diag[k - 1] -= lll;
    }
    if (has_u && has_l) e.off[k - 1] -= lul;
    if (p) {
      auto xi = x.row(static_cast<Eigen::Index>(i));
      e.grad.tail(p) -= (lu + ll) * xi.transpose();
      e.bb.noalias() -= (luu + 2.0 * lul + lll) * xi.transpose() * xi;
      if (has_u) e.cross.row(k) += (luu + lul) * xi;
      if (has_l) e.cross.row(k - 1) += (lul + lll) * xi;
    }
  }
  return e;
}

// Solves the symmetric tridiagonal system T z = rhs (column-wise) via LDL^T.
// Returns false if T is not positive definite.
inline bool tridiag_solve(const Eigen::VectorXd& diag, const Eigen::VectorXd& off,
                          Eigen::MatrixXd& rhs) {
  const auto m = diag.size();
  Eigen::VectorXd dd(m), lo(std::max<Eigen::Index>(m - 1, 0));
  dd[0] = diag[0];
  if (!(dd[0] > 0.0)) return false;
  for (Eigen::Index j = 1; j < m; ++j) {
    lo[j - 1] = off[j - 1] / dd[j - 1];
    dd[j] = diag[j] - lo[j - 1] * off[j - 1];
    if (!(dd[j] > 0.0)) return false;
  }
  for (Eigen::Index j = 1; j < m; ++j) rhs.row(j) -= lo[j - 1] * rhs.row(j - 1);
  for (Eigen::Index j = 0; j < m; ++j) rhs.row(j) /= dd[j];
  for (Eigen::Index j = m - 2; j >= 0; --j) rhs.row(j) -= lo[j] * rhs.row(j + 1);
  return true;
}

// Newton direction for the bordered system [T C; C' B] d = g.
inline std::optional<Eigen::VectorXd> clm_direction(const ClmEval& e, std::size_t m_,
                                                    Eigen::Index p) {
  const auto m = static_cast<Eigen::Index>(m_);
  Eigen::MatrixXd rhs(m, p + 1);
  rhs.leftCols(p) = e.cross;
  rhs.col(p) = e.grad.head(m);
  if (!tridiag_solve(e.diag, e.off, rhs)) return std::nullopt;
  Eigen::VectorXd d(m + p);
  if (p == 0) {
    d = rhs.col(0);
    return d;
  }
  const Eigen::MatrixXd& y = rhs.leftCols(p);
  Eigen::MatrixXd schur = e.bb - e.cross.transpose() * y;
  Eigen::VectorXd r = e.grad.tail(p) - e.cross.transpose() * rhs.col(p);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(schur);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return std::nullopt;
  Eigen::VectorXd db = ldlt.solve(r);
  d.head(m) = rhs.col(p) - y * db;
  d.tail(p) = db;
  return d;
}

inline Eigen::VectorXd alpha_from_theta(const Eigen::VectorXd& theta) {
  Eigen::VectorXd a(theta.size());
  a[0] = theta[0];
  for (Eigen::Index j = 1; j < theta.size(); ++j) a[j] = a[j - 1] + std::exp(theta[j]);
  return a;
}

inline Eigen::VectorXd theta_from_alpha(const Eigen::VectorXd& a) {
  Eigen::VectorXd t(a.size());
  t[0] = a[0];
  for (Eigen::Index j = 1; j < a.size(); ++j) t[j] = std::log(a[j] - a[j - 1]);
  return t;
}

}  // namespace detail

/// Cumulative-link model g[P(Y <= y_j | x)] = alpha_j - x'beta on the
/// distinct observed outcome values. Intercepts are kept strictly increasing
/// by iterating on (alpha_1, log increments). Each step follows the Newton
/// direction of the concave (alpha, beta) log-likelihood mapped onto that
/// scale, with step-halving.
inline ModelFit fit_cumulative_link(const Column& y, const DesignMatrix& x, Link link,
                                    const FitOptions& opt = {}) {
  detail::check_rows(y, x);
  require(y.orderable(), "cumulative link: outcome must be orderable");
  auto v = detail::outcome_values(y);
  auto support = detail::distinct_sorted(v);
  require(support.size() >= 2, "cumulative link: outcome '" + y.name +
                                   "' needs at least two distinct values");
  const std::size_t n = v.size(), m = support.size() - 1;
  const auto p = static_cast<Eigen::Index>(x.p());
  require(n > static_cast<std::size_t>(p), "cumulative link: need more observations than regressors");
  if (p > 0)
    require(rank_with_intercept(x.matrix) == p + 1, "cumulative link: design is rank deficient");

  detail::ClmData data{link, std::vector<int>(n), &x.matrix, m};
  std::vector<double> counts(support.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    data.cat[i] = static_cast<int>(std::lower_bound(support.begin(), support.end(), v[i]) -
                                   support.begin());
    counts[data.cat[i]] += 1.0;
  }
  Eigen::VectorXd alpha(m);
  double cum = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    cum += counts[j];
    alpha[j] = link::quantile(link, cum / n);
  }
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);

  ModelFit fit;
  fit.family = Family::cumulative_link;
  fit.link = link;
  fit.n = n;
  fit.support = support;
  fit.term_names = x.term_names;

  auto ev = detail::clm_evaluate(data, alpha, beta, true);
  fit.loglik_trace.push_back(ev.loglik);
  Eigen::VectorXd theta = detail::theta_from_alpha(alpha);
  int it = 0;
  FitStatus status = FitStatus::max_iterations;
  for (; it <= opt.max_iter; ++it) {
    if (ev.grad.lpNorm<Eigen::Infinity>() <= opt.gradient_tol) {
      status = FitStatus::converged;
      break;
    }
    if (p > 0 && beta.lpNorm<Eigen::Infinity>() > opt.separation_bound) {
      status = FitStatus::separated;
      break;
    }
    if (it == opt.max_iter) break;
    auto dir = detail::clm_direction(ev, m, p);
    if (!dir) {
      // Curvature lost to underflow; fall back to a ridge-stabilized step.
      auto ridged = ev;
      double ridge = 1e-8 * (1.0 + ev.diag.cwiseAbs().maxCoeff());
      ridged.diag.array() += ridge;
      ridged.bb.diagonal().array() += ridge;
      dir = detail::clm_direction(ridged, m, p);
      if (!dir) throw NumericalError("cumulative link: information matrix is singular");
    }
    Eigen::VectorXd dtheta(m);
    dtheta[0] = (*dir)[0];
    for (std::size_t j = 1; j < m; ++j)
      dtheta[j] = ((*dir)[j] - (*dir)[j - 1]) / (alpha[j] - alpha[j - 1]);
    Eigen::VectorXd dbeta = dir->tail(p);
    const double gain = ev.grad.dot(*dir);
    const double noise = detail::loglik_noise(ev.loglik, n);

    bool moved = false;
    double t = 1.0;
    for (int h = 0; h < 40; ++h, t *= 0.5) {
      Eigen::VectorXd th = theta + t * dtheta;
      Eigen::VectorXd a = detail::alpha_from_theta(th);
      Eigen::VectorXd b = beta + t * dbeta;
      if (!a.allFinite()) continue;
      bool increasing = true;
      for (std::size_t j = 1; j < m && increasing; ++j) increasing = a[j] > a[j - 1];
      if (!increasing) continue;
      double ll = detail::clm_evaluate(data, a, b, false).loglik;
      if (detail::accept_step(ll, ev.loglik, gain, t, noise)) {
        theta = th;
        alpha = a;
        beta = b;
        moved = true;
        break;
      }
    }
    if (!moved) {
      status = FitStatus::stalled;
      break;
    }
    ev = detail::clm_evaluate(data, alpha, beta, true);
    fit.loglik_trace.push_back(ev.loglik);
  }
  fit.alpha = alpha;
  fit.beta = beta;
  fit.loglik = ev.loglik;
  fit.iterations = std::min(it, opt.max_iter);
  fit.gradient_norm = ev.grad.lpNorm<Eigen::Infinity>();
  fit.status = status;
  if (status == FitStatus::separated)
    fit.warnings.push_back("complete separation suspected: |beta| exceeded " +
                           std::to_string(opt.separation_bound) + "; returning capped fit");
  if (status == FitStatus::max_iterations || status == FitStatus::stalled)
    fit.warnings.push_back(std::string("cumulative link did not converge (") +
                           status_name(status) + ", gradient max-norm " +
                           std::to_string(fit.gradient_norm) + ")");
  return fit;
}

/// Log-likelihood of a cumulative-link model at given parameters; exposed for
/// finite-difference checks.
inline double cumulative_link_loglik(const Column& y, const DesignMatrix& x, Link link,
                                     const std::vector<double>& support,
                                     const Eigen::VectorXd& alpha, const Eigen::VectorXd& beta) {
  detail::ClmData data{link, std::vector<int>(y.size()), &x.matrix, support.size() - 1};
  for (std::size_t i = 0; i < y.size(); ++i)
    data.cat[i] = static_cast<int>(std::lower_bound(support.begin(), support.end(), y.values[i]) -
                                   support.begin());
  return detail::clm_evaluate(data, alpha, beta, false).loglik;
}

/// Analytic score of a cumulative-link model in (alpha, beta).
inline Eigen::VectorXd cumulative_link_score(const Column& y, const DesignMatrix& x, Link link,
                                             const std::vector<double>& support,
                                             const Eigen::VectorXd& alpha,
                                             const Eigen::VectorXd& beta) {
  detail::ClmData data{link, std::vector<int>(y.size()), &x.matrix, support.size() - 1};
  for (std::size_t i = 0; i < y.size(); ++i)
    data.cat[i] = static_cast<int>(std::lower_bound(support.begin(), support.end(), y.values[i]) -
                                   support.begin());
  return detail::clm_evaluate(data, alpha, beta, true).grad;
}

// ---------------------------------------------------------------------------
// Poisson and exponential regression

/// Log-link Poisson regression by iteratively reweighted least squares.
inline ModelFit fit_poisson(const Column& y, const DesignMatrix& x, const FitOptions& opt = {}) {
  detail::check_rows(y, x);
  require(y.kind == Kind::count || y.kind == Kind::binary || y.kind == Kind::continuous,
          "poisson: outcome must be a count");
  auto v = detail::outcome_values(y);
  for (double c : v)
    require(c >= 0.0 && c == std::floor(c), "poisson: outcome values must be nonnegative integers");
  double ybar = stats::mean(v);
  if (ybar == 0.0) throw NumericalError("poisson: outcome is all zero; intercept diverges");
  Eigen::MatrixXd a = detail::with_intercept(x);
  const auto k = a.cols();
  require(static_cast<Eigen::Index>(v.size()) > k, "poisson: need more observations than parameters");
  if (x.p() > 0) require(rank_with_intercept(x.matrix) == k, "poisson: design is rank deficient");
  Eigen::Map<const Eigen::VectorXd> yv(v.data(), static_cast<Eigen::Index>(v.size()));
  double lgam = 0.0;
  for (double c : v) lgam += std::lgamma(c + 1.0);

  auto loglik = [&](const Eigen::VectorXd& b) {
    Eigen::VectorXd eta = a * b;
    return (yv.array() * eta.array() - eta.array().exp()).sum() - lgam;
  };
  auto eval = [&](const Eigen::VectorXd& b) {
    Eigen::VectorXd eta = a * b;
    Eigen::VectorXd mu = eta.array().exp();
    detail::NewtonEval e;
    e.loglik = (yv.array() * eta.array() - mu.array()).sum() - lgam;
    e.grad = a.transpose() * (yv - mu);
    e.info = a.transpose() * mu.asDiagonal() * a;
    return e;
  };
  Eigen::VectorXd b0 = Eigen::VectorXd::Zero(k);
  b0[0] = std::log(ybar);
  auto r = detail::newton_maximize(b0, eval, loglik, opt, static_cast<std::size_t>(a.rows()));
  ModelFit fit;
  fit.family = Family::poisson;
  fit.n = v.size();
  fit.term_names = x.term_names;
  fit.alpha = r.b.head(1);
  fit.beta = r.b.tail(k - 1);
  fit.loglik = r.loglik;
  fit.status = r.status;
  fit.iterations = r.iterations;
  fit.gradient_norm = r.grad_norm;
  fit.loglik_trace = std::move(r.trace);
  if (!fit.converged()) fit.warnings.push_back("poisson fit did not converge");
  return fit;
}

/// Exponential regression with rate_i = exp(alpha + x_i'beta) for
/// right-censored times.
inline ModelFit fit_exponential_survival(const Column& y, const DesignMatrix& x,
                                         const FitOptions& opt = {}) {
  detail::check_rows(y, x);
  require(y.kind == Kind::right_censored, "exponential survival: outcome must be right-censored");
  auto t = detail::outcome_values(y);
  for (double ti : t) require(ti > 0.0, "exponential survival: times must be positive");
  Eigen::VectorXd time = Eigen::Map<const Eigen::VectorXd>(t.data(), static_cast<Eigen::Index>(t.size()));
  Eigen::VectorXd delta(time.size());
  for (Eigen::Index i = 0; i < time.size(); ++i) delta[i] = y.events[i];
  if (delta.sum() == 0.0) throw NumericalError("exponential survival: no events observed");
  Eigen::MatrixXd a = detail::with_intercept(x);
  const auto k = a.cols();
  if (x.p() > 0) require(rank_with_intercept(x.matrix) == k, "exponential survival: design is rank deficient");

  auto loglik = [&](const Eigen::VectorXd& b) {
    Eigen::VectorXd eta = a * b;
    return (delta.array() * eta.array() - time.array() * eta.array().exp()).sum();
  };
  auto eval = [&](const Eigen::VectorXd& b) {
    Eigen::VectorXd eta = a * b;
    Eigen::VectorXd w = time.array() * eta.array().exp();
    detail::NewtonEval e;
    e.loglik = (delta.array() * eta.array()).sum() - w.sum();
    e.grad = a.transpose() * (delta - w);
    e.info = a.transpose() * w.asDiagonal() * a;
    return e;
  };
  Eigen::VectorXd b0 = Eigen::VectorXd::Zero(k);
  b0[0] = std::log(delta.sum() / time.sum());
  auto r = detail::newton_maximize(b0, eval, loglik, opt, static_cast<std::size_t>(a.rows()));
  ModelFit fit;
  fit.family = Family::exponential_survival;
  fit.n = t.size();
  fit.term_names = x.term_names;
  fit.alpha = r.b.head(1);
  fit.beta = r.b.tail(k - 1);
  fit.loglik = r.loglik;
  fit.status = r.status;
  fit.iterations = r.iterations;
  fit.gradient_norm = r.grad_norm;
  fit.loglik_trace = std::move(r.trace);
  if (!fit.converged()) fit.warnings.push_back("exponential survival fit did not converge");
  return fit;
}

// ---------------------------------------------------------------------------

/// Poisson pmf accumulated until the CDF reaches 1 - 1e-12.
inline FittedDistribution poisson_distribution(double mu) {
  std::vector<double> pts, cum;
  double c = 0.0;
  for (int k = 0;; ++k) {
    double lp = k * std::log(mu) - mu - std::lgamma(k + 1.0);
    c += std::exp(lp);
    pts.push_back(k);
    cum.push_back(std::min(c, 1.0));
    if (c >= 1.0 - 1e-12 || (k > mu && std::exp(lp) < 1e-300)) break;
  }
  cum.back() = 1.0;
  return FittedDistribution::discrete(std::move(pts), std::move(cum));
}

/// Fitted conditional distribution for one design row.
inline FittedDistribution predict_distribution(const ModelFit& fit, std::span<const double> row) {
  switch (fit.family) {
    case Family::empirical:
      require(row.empty(), "empirical fit takes no regressors");
      return FittedDistribution::discrete(fit.support, fit.cum_probs);
    case Family::linear_normal:
      return FittedDistribution::normal(fit.alpha[0] + fit.linear_predictor(row), fit.sigma);
    case Family::linear_empirical:
      return FittedDistribution::shifted_empirical(fit.alpha[0] + fit.linear_predictor(row),
                                                   fit.residuals);
    case Family::cumulative_link: {
      double eta = fit.linear_predictor(row);
      std::vector<double> cum(fit.support.size(), 1.0);
      for (Eigen::Index j = 0; j < fit.alpha.size(); ++j)
        cum[j] = link::cdf(fit.link, fit.alpha[j] - eta);
      return FittedDistribution::discrete(fit.support, std::move(cum));
    }
    case Family::poisson:
      return poisson_distribution(std::exp(fit.alpha[0] + fit.linear_predictor(row)));
    case Family::exponential_survival:
      return FittedDistribution::exponential(std::exp(fit.alpha[0] + fit.linear_predictor(row)));
  }
  throw UserError("unknown model family");
}

inline FittedDistribution predict_distribution(const ModelFit& fit, const DesignMatrix& x,
                                               std::size_t row) {
  require(x.p() == fit.p(), "design has " + std::to_string(x.p()) + " columns, fit expects " +
                                std::to_string(fit.p()));
  Eigen::VectorXd r = x.matrix.row(static_cast<Eigen::Index>(row)).transpose();
  return predict_distribution(fit, std::span<const double>(r.data(), static_cast<std::size_t>(r.size())));
}

struct LrTest {
  double statistic;
  double df;
  double p_value;
};

/// Likelihood-ratio test of a nested pair of fits.
inline LrTest lr_test(const ModelFit& reduced, const ModelFit& full) {
  double df = static_cast<double>(full.p() + full.alpha.size()) -
              static_cast<double>(reduced.p() + reduced.alpha.size());
  require(df > 0, "lr_test: full model must have more parameters than the reduced model");
  double stat = std::max(0.0, 2.0 * (full.loglik - reduced.loglik));
  return {stat, df, stats::chisq_sf(stat, df)};
}

}  // namespace psrkit
