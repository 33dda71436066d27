#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "stats.hpp"

namespace psrkit {

/// Finite support with cumulative probabilities; the last equals 1.
struct DiscreteSupport {
  std::vector<double> points;     // strictly increasing
  std::vector<double> cum_probs;  // nondecreasing, ends at 1
};

struct NormalDist {
  double mu = 0.0;
  double sigma = 1.0;
};

struct ExponentialDist {
  double rate = 1.0;
};

/// F(y) = empirical CDF of the pooled residuals evaluated at y - center.
struct ShiftedEmpirical {
  double center = 0.0;
  std::vector<double> sorted_residuals;
};

/// Per-observation fitted conditional distribution F*.
class FittedDistribution {
 public:
  using Form = std::variant<DiscreteSupport, NormalDist, ExponentialDist, ShiftedEmpirical>;

  static FittedDistribution discrete(std::vector<double> points, std::vector<double> cum_probs) {
    require(!points.empty() && points.size() == cum_probs.size(),
            "discrete distribution: points and cumulative probabilities must align");
    for (std::size_t i = 0; i < points.size(); ++i) {
      require(std::isfinite(points[i]), "discrete distribution: non-finite support point");
      require(cum_probs[i] >= 0.0 && cum_probs[i] <= 1.0 + 1e-12,
              "discrete distribution: cumulative probability outside [0,1]");
      if (i) {
        require(points[i] > points[i - 1], "discrete distribution: points must increase");
        require(cum_probs[i] >= cum_probs[i - 1],
                "discrete distribution: cumulative probabilities must not decrease");
      }
    }
    require(std::abs(cum_probs.back() - 1.0) <= 1e-12,
            "discrete distribution: cumulative probabilities must end at 1");
    cum_probs.back() = 1.0;
    return FittedDistribution(DiscreteSupport{std::move(points), std::move(cum_probs)});
  }

  /// From category probabilities over `points`.
  static FittedDistribution from_probs(std::vector<double> points, std::span<const double> probs) {
    std::vector<double> cum(probs.size());
    double s = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) cum[i] = (s += probs[i]);
    return discrete(std::move(points), std::move(cum));
  }

  static FittedDistribution normal(double mu, double sigma) {
    require(std::isfinite(mu) && std::isfinite(sigma) && sigma > 0.0,
            "normal distribution: need finite mu and sigma > 0");
    return FittedDistribution(NormalDist{mu, sigma});
  }

  static FittedDistribution exponential(double rate) {
    require(std::isfinite(rate) && rate > 0.0, "exponential distribution: need rate > 0");
    return FittedDistribution(ExponentialDist{rate});
  }

  static FittedDistribution shifted_empirical(double center, std::vector<double> residuals) {
    require(!residuals.empty(), "shifted empirical distribution: no residuals");
    std::sort(residuals.begin(), residuals.end());
    return FittedDistribution(ShiftedEmpirical{center, std::move(residuals)});
  }

  const Form& form() const { return form_; }

  /// P(Y* <= y).
  double cdf(double y) const {
    return std::visit([y](const auto& f) { return cdf_impl(f, y, false); }, form_);
  }

  /// P(Y* < y).
  double cdf_left(double y) const {
    return std::visit([y](const auto& f) { return cdf_impl(f, y, true); }, form_);
  }

  nlohmann::json to_json() const {
    return std::visit(
        [](const auto& f) -> nlohmann::json {
          using T = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<T, DiscreteSupport>)
            return {{"form", "discrete"}, {"points", f.points}, {"cum_probs", f.cum_probs}};
          else if constexpr (std::is_same_v<T, NormalDist>)
            return {{"form", "normal"}, {"mu", f.mu}, {"sigma", f.sigma}};
          else if constexpr (std::is_same_v<T, ExponentialDist>)
            return {{"form", "exponential"}, {"rate", f.rate}};
          else
            return {{"form", "shifted_empirical"},
                    {"center", f.center},
                    {"residuals", f.sorted_residuals}};
        },
        form_);
  }

 private:
  explicit FittedDistribution(Form f) : form_(std::move(f)) {}

  static double cdf_impl(const DiscreteSupport& d, double y, bool strict) {
    auto it = strict ? std::lower_bound(d.points.begin(), d.points.end(), y)
                     : std::upper_bound(d.points.begin(), d.points.end(), y);
    auto k = it - d.points.begin();
    return k == 0 ? 0.0 : d.cum_probs[k - 1];
  }
  static double cdf_impl(const NormalDist& d, double y, bool) {
    return stats::normal_cdf((y - d.mu) / d.sigma);
  }
  static double cdf_impl(const ExponentialDist& d, double y, bool) {
    return y <= 0.0 ? 0.0 : -std::expm1(-d.rate * y);
  }
  static double cdf_impl(const ShiftedEmpirical& d, double y, bool strict) {
    const auto& r = d.sorted_residuals;
    double e = y - d.center;
    auto it = strict ? std::lower_bound(r.begin(), r.end(), e) : std::upper_bound(r.begin(), r.end(), e);
    return static_cast<double>(it - r.begin()) / static_cast<double>(r.size());
  }

  Form form_;
};

}  // namespace psrkit
