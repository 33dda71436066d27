#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "data_model.hpp"
#include "error.hpp"
#include "psr.hpp"
#include "stats.hpp"

namespace psrkit {

/// Sorted PSRs against Uniform(-1, 1) plotting positions -1 + 2(i - 0.5)/n.
struct QQData {
  std::vector<double> theoretical;
  std::vector<double> sample;
  std::vector<std::string> warnings;
};

inline QQData qq_uniform(const PsrVector& p, bool discrete_fit = false) {
  require(p.size() >= 2, "qq_uniform: need at least 2 residuals");
  QQData qq;
  qq.sample = p.values;
  std::sort(qq.sample.begin(), qq.sample.end());
  const double n = static_cast<double>(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) qq.theoretical.push_back(-1.0 + 2.0 * (i + 0.5) / n);
  if (discrete_fit)
    qq.warnings.push_back("residuals come from a discrete-outcome fit; uniformity is not expected");
  return qq;
}

struct KsUniform {
  double statistic = stats::kNaN;
  double p_value = stats::kNaN;
  std::vector<std::string> warnings;
};

/// Kolmogorov-Smirnov test of the PSRs against Uniform(-1, 1).
inline KsUniform ks_uniform(const PsrVector& p, bool discrete_fit = false) {
  require(p.size() >= 8, "ks_uniform: need at least 8 residuals");
  auto r = stats::ks_test(p.values, [](double x) { return std::clamp((x + 1.0) / 2.0, 0.0, 1.0); });
  KsUniform out{r.statistic, r.p_value, {}};
  if (discrete_fit)
    out.warnings.push_back("residuals come from a discrete-outcome fit; the test is conservative");
  return out;
}

struct SmoothCurve {
  std::vector<double> x_grid;
  std::vector<double> y_smooth;
  double span = 2.0 / 3.0;
  int robust_iters = 3;
};

/// Locally weighted linear regression with tricube neighbourhood weights and
/// bisquare robustness iterations. Returns one smoothed value per distinct x.
inline SmoothCurve lowess(std::span<const double> x, std::span<const double> y,
                          double span = 2.0 / 3.0, int robust_iters = 3) {
  require(x.size() == y.size(), "lowess: x and y differ in length");
  require(x.size() >= 5, "lowess: need at least 5 points");
  require(span > 0.0 && span <= 1.0, "lowess: span must be in (0, 1]");
  require(robust_iters >= 0, "lowess: robustness iterations must be nonnegative");
  const std::size_t n = x.size();
  const auto q = static_cast<std::size_t>(std::floor(span * n + 1e-7));
  require(q >= 2, "lowess: span too small, fewer than 2 points in each window");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = x[order[i]];
    ys[i] = y[order[i]];
    require(std::isfinite(xs[i]) && std::isfinite(ys[i]), "lowess: non-finite input");
  }

  std::vector<double> robustness(n, 1.0), fitted(n);
  auto fit_at = [&](std::size_t i) {
    // q nearest neighbours of xs[i] form a contiguous window in sorted order.
    std::size_t lo = i >= q - 1 ? i - (q - 1) : 0;
    if (lo + q > n) lo = n - q;
    while (lo > 0 && xs[i] - xs[lo - 1] < xs[lo + q - 1] - xs[i]) --lo;
    while (lo + q < n && xs[lo + q] - xs[i] < xs[i] - xs[lo]) ++lo;
    const double h = std::max(xs[i] - xs[lo], xs[lo + q - 1] - xs[i]);
    auto first = std::lower_bound(xs.begin(), xs.end(), xs[i] - h) - xs.begin();
    auto last = std::upper_bound(xs.begin(), xs.end(), xs[i] + h) - xs.begin();
    double sw = 0.0, sx = 0.0, sy = 0.0;
    std::vector<double> w(static_cast<std::size_t>(last - first));
    for (auto j = first; j < last; ++j) {
      double d = std::abs(xs[j] - xs[i]);
      double t = h > 0.0 ? d / h : 0.0;
      double tri = t < 1.0 ? std::pow(1.0 - t * t * t, 3) : 0.0;
      double wj = tri * robustness[j];
      w[j - first] = wj;
      sw += wj;
      sx += wj * xs[j];
      sy += wj * ys[j];
    }
    if (sw <= 0.0) return ys[i];
    const double mx = sx / sw, my = sy / sw;
    double sxx = 0.0, sxy = 0.0;
    for (auto j = first; j < last; ++j) {
      double wj = w[j - first];
      sxx += wj * (xs[j] - mx) * (xs[j] - mx);
      sxy += wj * (xs[j] - mx) * (ys[j] - my);
    }
    const double range = xs.back() - xs.front();
    if (sxx <= 1e-14 * sw * range * range || sxx <= 0.0) return my;
    return my + sxy / sxx * (xs[i] - mx);
  };

  for (int iter = 0;; ++iter) {
    for (std::size_t i = 0; i < n; ++i)
      fitted[i] = (i > 0 && xs[i] == xs[i - 1]) ? fitted[i - 1] : fit_at(i);
    if (iter >= robust_iters) break;
    std::vector<double> absres(n);
    for (std::size_t i = 0; i < n; ++i) absres[i] = std::abs(ys[i] - fitted[i]);
    std::vector<double> tmp = absres;
    std::nth_element(tmp.begin(), tmp.begin() + n / 2, tmp.end());
    double med = tmp[n / 2];
    if (n % 2 == 0) med = 0.5 * (med + *std::max_element(tmp.begin(), tmp.begin() + n / 2));
    double mean_abs = std::accumulate(absres.begin(), absres.end(), 0.0) / n;
    if (med < 1e-7 * mean_abs || med == 0.0) break;
    for (std::size_t i = 0; i < n; ++i) {
      double u = absres[i] / (6.0 * med);
      robustness[i] = u < 1.0 ? (1.0 - u * u) * (1.0 - u * u) : 0.0;
    }
  }

  SmoothCurve out;
  out.span = span;
  out.robust_iters = robust_iters;
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && xs[i] == xs[i - 1]) continue;
    out.x_grid.push_back(xs[i]);
    out.y_smooth.push_back(fitted[i]);
  }
  return out;
}

struct ResidualPlot {
  std::string predictor;
  std::vector<double> x;
  std::vector<double> psr;
  SmoothCurve curve;
};

/// PSR against a continuous predictor with a lowess curve. The curve is
/// clipped to the observed residual range.
inline ResidualPlot residual_by_predictor(const PsrVector& p, const Column& x,
                                          double span = 2.0 / 3.0, int robust_iters = 3) {
  require(p.size() == x.size(), "residual_by_predictor: residuals and predictor differ in length");
  require(x.kind == Kind::continuous,
          "residual_by_predictor: predictor '" + x.name +
              "' is not continuous; summarise residuals by level instead");
  ResidualPlot plot;
  plot.predictor = x.name;
  plot.x = x.values;
  plot.psr = p.values;
  plot.curve = lowess(plot.x, plot.psr, span, robust_iters);
  auto [lo, hi] = std::minmax_element(plot.psr.begin(), plot.psr.end());
  for (double& v : plot.curve.y_smooth) v = std::clamp(v, *lo, *hi);
  return plot;
}

// ---------------------------------------------------------------------------
// Plot output

namespace detail {

inline std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

inline std::string xml_escape(const std::string& in) {
  std::string out;
  for (char c : in) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Frame {
  double x0, x1, y0, y1;
  static constexpr double size = 480.0, margin = 50.0;
  double px(double x) const { return margin + (x - x0) / (x1 - x0) * (size - 2 * margin); }
  double py(double y) const { return size - margin - (y - y0) / (y1 - y0) * (size - 2 * margin); }
};

inline std::string svg_open(const Frame& f, const std::string& title, const std::string& xlab,
                            const std::string& ylab) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"480\" viewBox=\"0 0 480 480\">\n"
    << "<rect x=\"0\" y=\"0\" width=\"480\" height=\"480\" fill=\"white\"/>\n"
    << "<rect x=\"50\" y=\"50\" width=\"380\" height=\"380\" fill=\"none\" stroke=\"black\"/>\n"
    << "<text x=\"240\" y=\"30\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title) << "</text>\n"
    << "<text x=\"240\" y=\"470\" text-anchor=\"middle\" font-size=\"12\">" << xml_escape(xlab) << "</text>\n"
    << "<text x=\"15\" y=\"240\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 15 240)\">"
    << xml_escape(ylab) << "</text>\n"
    << "<text x=\"50\" y=\"445\" font-size=\"10\">" << fmt3(f.x0) << "</text>\n"
    << "<text x=\"430\" y=\"445\" text-anchor=\"end\" font-size=\"10\">" << fmt3(f.x1) << "</text>\n"
    << "<text x=\"45\" y=\"430\" text-anchor=\"end\" font-size=\"10\">" << fmt3(f.y0) << "</text>\n"
    << "<text x=\"45\" y=\"55\" text-anchor=\"end\" font-size=\"10\">" << fmt3(f.y1) << "</text>\n";
  return s.str();
}

inline void write_text(const std::string& text, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UserError("cannot write '" + path + "'");
  out << text;
  if (!out) throw UserError("write failed for '" + path + "'");
}

}  // namespace detail

inline std::string render_svg(const QQData& qq) {
  require(!qq.sample.empty(), "render: QQ data has no points");
  detail::Frame f{-1.0, 1.0, -1.0, 1.0};
  std::ostringstream s;
  s << detail::svg_open(f, "PSR vs Uniform(-1,1)", "Uniform(-1,1) quantile", "PSR quantile");
  s << "<line x1=\"" << detail::fmt3(f.px(-1)) << "\" y1=\"" << detail::fmt3(f.py(-1)) << "\" x2=\""
    << detail::fmt3(f.px(1)) << "\" y2=\"" << detail::fmt3(f.py(1))
    << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  for (std::size_t i = 0; i < qq.sample.size(); ++i)
    s << "<circle cx=\"" << detail::fmt3(f.px(qq.theoretical[i])) << "\" cy=\""
      << detail::fmt3(f.py(qq.sample[i])) << "\" r=\"2\" fill=\"black\"/>\n";
  s << "</svg>\n";
  return s.str();
}

inline std::string render_svg(const ResidualPlot& plot) {
  require(!plot.x.empty(), "render: residual plot has no points");
  auto [lo, hi] = std::minmax_element(plot.x.begin(), plot.x.end());
  double x0 = *lo, x1 = *hi;
  if (x0 == x1) {
    x0 -= 0.5;
    x1 += 0.5;
  }
  detail::Frame f{x0, x1, -1.0, 1.0};
  std::ostringstream s;
  s << detail::svg_open(f, "PSR by " + plot.predictor, plot.predictor, "PSR");
  s << "<line x1=\"" << detail::fmt3(f.px(x0)) << "\" y1=\"" << detail::fmt3(f.py(0)) << "\" x2=\""
    << detail::fmt3(f.px(x1)) << "\" y2=\"" << detail::fmt3(f.py(0))
    << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  for (std::size_t i = 0; i < plot.x.size(); ++i)
    s << "<circle cx=\"" << detail::fmt3(f.px(plot.x[i])) << "\" cy=\""
      << detail::fmt3(f.py(plot.psr[i])) << "\" r=\"2\" fill=\"black\"/>\n";
  s << "<polyline fill=\"none\" stroke=\"red\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < plot.curve.x_grid.size(); ++i)
    s << (i ? " " : "") << detail::fmt3(f.px(plot.curve.x_grid[i])) << ","
      << detail::fmt3(f.py(plot.curve.y_smooth[i]));
  s << "\"/>\n</svg>\n";
  return s.str();
}

template <typename Plot>
void render(const Plot& plot, const std::string& path) {
  detail::write_text(render_svg(plot), path);
}

inline std::string plot_csv(const QQData& qq) {
  std::ostringstream s;
  s << "theoretical,sample\n";
  for (std::size_t i = 0; i < qq.sample.size(); ++i)
    s << format_double(qq.theoretical[i]) << ',' << format_double(qq.sample[i]) << '\n';
  return s.str();
}

/// Points and curve in one long table: series is "point" or "lowess".
inline std::string plot_csv(const ResidualPlot& plot) {
  std::ostringstream s;
  s << "series," << csv::quote(plot.predictor) << ",psr\n";
  for (std::size_t i = 0; i < plot.x.size(); ++i)
    s << "point," << format_double(plot.x[i]) << ',' << format_double(plot.psr[i]) << '\n';
  for (std::size_t i = 0; i < plot.curve.x_grid.size(); ++i)
    s << "lowess," << format_double(plot.curve.x_grid[i]) << ','
      << format_double(plot.curve.y_smooth[i]) << '\n';
  return s.str();
}

}  // namespace psrkit
