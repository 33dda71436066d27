#pragma once

#include <cmath>
#include <string>

#include "error.hpp"
#include "stats.hpp"

namespace psrkit {

/// Link of a cumulative-link model, g = F^-1 for a latent error CDF F.
///   logit   F(x) = 1 / (1 + e^-x)
///   probit  F(x) = Phi(x)
///   cloglog F(x) = 1 - exp(-e^x)
///   loglog  F(x) = exp(-e^-x)
enum class Link { logit, probit, cloglog, loglog };

inline const char* link_name(Link l) {
  switch (l) {
    case Link::logit: return "logit";
    case Link::probit: return "probit";
    case Link::cloglog: return "cloglog";
    case Link::loglog: return "loglog";
  }
  return "?";
}

inline Link parse_link(const std::string& s) {
  if (s == "logit") return Link::logit;
  if (s == "probit") return Link::probit;
  if (s == "cloglog") return Link::cloglog;
  if (s == "loglog") return Link::loglog;
  throw UserError("unknown link '" + s + "'");
}

namespace link {

inline double cdf(Link l, double x) {
  switch (l) {
    case Link::logit: return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    case Link::probit: return stats::normal_cdf(x);
    case Link::cloglog: return -std::expm1(-std::exp(x));
    case Link::loglog: return std::exp(-std::exp(-x));
  }
  return stats::kNaN;
}

/// 1 - F(x), computed without cancellation.
inline double sf(Link l, double x) {
  switch (l) {
    case Link::logit: return cdf(l, -x);
    case Link::probit: return stats::normal_cdf(-x);
    case Link::cloglog: return std::exp(-std::exp(x));
    case Link::loglog: return -std::expm1(-std::exp(-x));
  }
  return stats::kNaN;
}

inline double pdf(Link l, double x) {
  switch (l) {
    case Link::logit: {
      double e = std::exp(-std::abs(x));
      return e / ((1.0 + e) * (1.0 + e));
    }
    case Link::probit: return stats::normal_pdf(x);
    case Link::cloglog: return std::exp(x - std::exp(x));
    case Link::loglog: return std::exp(-x - std::exp(-x));
  }
  return stats::kNaN;
}

/// Derivative of the density.
inline double dpdf(Link l, double x) {
  switch (l) {
    case Link::logit: return pdf(l, x) * (sf(l, x) - cdf(l, x));
    case Link::probit: return -x * stats::normal_pdf(x);
    case Link::cloglog: return pdf(l, x) * (1.0 - std::exp(x));
    case Link::loglog: return pdf(l, x) * (std::exp(-x) - 1.0);
  }
  return stats::kNaN;
}

inline double quantile(Link l, double p) {
  switch (l) {
    case Link::logit: return std::log(p / (1.0 - p));
    case Link::probit: return stats::normal_quantile(p);
    case Link::cloglog: return std::log(-std::log1p(-p));
    case Link::loglog: return -std::log(-std::log(p));
  }
  return stats::kNaN;
}

/// F(upper) - F(lower) for lower < upper; either bound may be infinite.
inline double interval(Link l, double lower, double upper) {
  if (lower > 0.0) return sf(l, lower) - sf(l, upper);
  return cdf(l, upper) - cdf(l, lower);
}

}  // namespace link
}  // namespace psrkit
