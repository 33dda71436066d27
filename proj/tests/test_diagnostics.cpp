#include <psrkit/diagnostics.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <regex>

#include "oracles.hpp"

using namespace psrkit;

namespace {

std::size_t count(const std::string& s, const std::string& what) {
  std::size_t c = 0;
  for (auto pos = s.find(what); pos != std::string::npos; pos = s.find(what, pos + 1)) ++c;
  return c;
}

PsrVector uniform_psrs(std::mt19937_64& g, int n) {
  std::uniform_real_distribution<double> u(-1, 1);
  PsrVector p;
  for (int i = 0; i < n; ++i) p.values.push_back(u(g));
  return p;
}

TEST(Qq, PlottingPositions) {
  auto qq = qq_uniform(PsrVector{{0.5, -0.5, 0.0}, ""});
  ASSERT_EQ(qq.theoretical.size(), 3u);
  EXPECT_NEAR(qq.theoretical[0], -2.0 / 3, 1e-15);
  EXPECT_NEAR(qq.theoretical[1], 0.0, 1e-15);
  EXPECT_NEAR(qq.theoretical[2], 2.0 / 3, 1e-15);
  EXPECT_EQ(qq.sample, (std::vector<double>{-0.5, 0.0, 0.5}));
  EXPECT_THROW(qq_uniform(PsrVector{{0.1}, ""}), UserError);
}

TEST(Qq, ConstantAndPermutation) {
  auto qq = qq_uniform(PsrVector{{0.2, 0.2, 0.2, 0.2}, ""});
  for (double v : qq.sample) EXPECT_EQ(v, 0.2);
  std::mt19937_64 g(1);
  auto p = uniform_psrs(g, 50);
  auto q = p;
  std::shuffle(q.values.begin(), q.values.end(), g);
  auto a = qq_uniform(p), b = qq_uniform(q);
  EXPECT_EQ(a.sample, b.sample);
  EXPECT_EQ(a.theoretical, b.theoretical);
  EXPECT_FALSE(qq_uniform(p, true).warnings.empty());
}

TEST(Qq, UniformBand) {
  std::mt19937_64 g(2);
  auto qq = qq_uniform(uniform_psrs(g, 5000));
  double worst = 0;
  for (std::size_t i = 0; i < qq.sample.size(); ++i)
    worst = std::max(worst, std::abs(qq.sample[i] - qq.theoretical[i]));
  EXPECT_LT(worst, 0.05);
}

TEST(Ks, CalibratedUnderUniform) {
  std::mt19937_64 g(3);
  int rejected = 0;
  for (int rep = 0; rep < 500; ++rep) rejected += ks_uniform(uniform_psrs(g, 2000)).p_value < 0.05;
  double rate = rejected / 500.0;
  EXPECT_GT(rate, 0.02);
  EXPECT_LT(rate, 0.085);
}

TEST(Ks, KnownStatistic) {
  PsrVector p{{-0.9, -0.7, -0.5, -0.3, 0.1, 0.3, 0.5, 0.7}, ""};
  // On the [0,1] scale the points are .05,.15,.25,.35,.55,.65,.75,.85.
  auto r = ks_uniform(p);
  EXPECT_NEAR(r.statistic, 0.15, 1e-12);
  EXPECT_THROW(ks_uniform(PsrVector{{0.0}, ""}), UserError);
}

TEST(Ks, MisspecifiedNormalOnLognormal) {
  std::mt19937_64 g(4);
  std::normal_distribution<double> nd;
  const int n = 500;
  std::vector<double> x(n), y(n);
  for (int i = 0; i < n; ++i) {
    x[i] = nd(g);
    y[i] = std::exp(0.5 * x[i] + nd(g));
  }
  auto xd = oracle::design(x);
  auto yc = Column::continuous("y", y);
  auto bad = ks_uniform(psr_all(fit_linear_normal(yc, xd), yc, xd));
  EXPECT_LT(bad.p_value, 0.001);
  auto good = ks_uniform(psr_all(fit_cumulative_link(yc, xd, Link::probit), yc, xd));
  EXPECT_GT(good.p_value, 0.01);
}

TEST(Lowess, ReproducesLines) {
  std::mt19937_64 g(5);
  std::uniform_real_distribution<double> u(-3, 5);
  std::vector<double> x(60), y(60);
  for (int i = 0; i < 60; ++i) {
    x[i] = u(g);
    y[i] = 1.5 - 0.75 * x[i];
  }
  for (double span : {0.2, 0.5, 2.0 / 3, 1.0})
    for (int it : {0, 3}) {
      auto c = lowess(x, y, span, it);
      for (std::size_t k = 0; k < c.x_grid.size(); ++k)
        EXPECT_NEAR(c.y_smooth[k], 1.5 - 0.75 * c.x_grid[k], 1e-10);
    }
}

TEST(Lowess, SpanOneEqualsGlobalLeastSquaresOnLine) {
  std::vector<double> x{0, 1, 1, 2, 4, 7, 9}, y;
  for (double v : x) y.push_back(3 * v - 2);
  auto c = lowess(x, y, 1.0, 0);
  ASSERT_EQ(c.x_grid, (std::vector<double>{0, 1, 2, 4, 7, 9}));
  for (std::size_t k = 0; k < c.x_grid.size(); ++k) EXPECT_NEAR(c.y_smooth[k], 3 * c.x_grid[k] - 2, 1e-10);
}

TEST(Lowess, ConstantInput) {
  std::vector<double> x{1, 2, 3, 4, 5, 6}, y(6, 0.25);
  for (double v : lowess(x, y).y_smooth) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(Lowess, NoisyQuadratic) {
  std::mt19937_64 g(6);
  std::uniform_real_distribution<double> u(-1, 1);
  std::normal_distribution<double> nd(0, 0.05);
  const int n = 200;
  std::vector<double> x(n), y(n);
  for (int i = 0; i < n; ++i) {
    x[i] = u(g);
    y[i] = x[i] * x[i] + nd(g);
  }
  auto c = lowess(x, y);
  for (std::size_t k = 0; k < c.x_grid.size(); ++k) {
    double xv = c.x_grid[k];
    if (std::abs(xv) > 0.8) continue;
    EXPECT_LT(std::abs(c.y_smooth[k] - xv * xv), 5 * 0.05) << xv;
  }
}

TEST(Lowess, Preconditions) {
  std::vector<double> x{1, 2, 3, 4}, y{1, 2, 3, 4};
  EXPECT_THROW(lowess(x, y), UserError);
  std::vector<double> x5{1, 2, 3, 4, 5};
  EXPECT_THROW(lowess(x5, x5, 0.1), UserError);
  EXPECT_THROW(lowess(x5, x5, 1.5), UserError);
}

TEST(ResidualPlot, ZeroResidualsAndBounds) {
  std::vector<double> x{1, 2, 3, 4, 5, 6, 7};
  auto plot = residual_by_predictor(PsrVector{std::vector<double>(7, 0.0), ""}, Column::continuous("x", x));
  for (double v : plot.curve.y_smooth) EXPECT_EQ(v, 0.0);
  std::mt19937_64 g(7);
  for (int rep = 0; rep < 20; ++rep) {
    auto p = uniform_psrs(g, 40);
    std::vector<double> xs(40);
    std::uniform_real_distribution<double> u(0, 1);
    for (auto& v : xs) v = u(g);
    auto rp = residual_by_predictor(p, Column::continuous("x", xs), 0.3, 0);
    auto [lo, hi] = std::minmax_element(p.values.begin(), p.values.end());
    for (double v : rp.curve.y_smooth) {
      EXPECT_GE(v, *lo);
      EXPECT_LE(v, *hi);
    }
  }
  EXPECT_THROW(residual_by_predictor(PsrVector{{0, 0, 0, 0, 0}, ""},
                                     Column::ordinal("g", {"a", "b"}, {0, 1, 0, 1, 0})),
               UserError);
}

TEST(Render, QqStructure) {
  auto svg = render_svg(qq_uniform(PsrVector{{-0.5, 0.0, 0.5}, ""}));
  EXPECT_EQ(count(svg, "<circle"), 3u);
  EXPECT_EQ(count(svg, "<line"), 1u);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_THROW(render_svg(QQData{}), UserError);
}

TEST(Render, ResidualStructureAndDeterminism) {
  std::vector<double> x{1, 2, 3, 4, 5, 6};
  PsrVector p{{-0.2, 0.1, 0.3, -0.4, 0.0, 0.2}, ""};
  auto plot = residual_by_predictor(p, Column::continuous("a<b", x));
  auto svg = render_svg(plot);
  EXPECT_EQ(count(svg, "<circle"), 6u);
  EXPECT_EQ(count(svg, "<line"), 1u);
  EXPECT_EQ(count(svg, "<polyline"), 1u);
  EXPECT_NE(svg.find("a&lt;b"), std::string::npos);

  auto dir = std::filesystem::path(PSRKIT_TEST_TMP);
  std::filesystem::create_directories(dir);
  auto a = (dir / "rbp_a.svg").string(), b = (dir / "rbp_b.svg").string();
  render(plot, a);
  render(plot, b);
  auto slurp = [](const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_EQ(slurp(a), svg);
  EXPECT_THROW(render(plot, (dir / "missing_dir" / "x.svg").string()), UserError);
}

TEST(Render, CsvForms) {
  auto csv = plot_csv(qq_uniform(PsrVector{{-0.5, 0.5}, ""}));
  EXPECT_EQ(csv, "theoretical,sample\n-0.5,-0.5\n0.5,0.5\n");
}

}  // namespace
