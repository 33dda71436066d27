#include <psrkit/cli.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace psrkit;

namespace {

namespace fs = std::filesystem;

fs::path tmp_dir() {
  fs::path d = fs::path(PSRKIT_TEST_TMP) / "cli";
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

// Synthetic data shaped like a cervical-lesion study: ordinal stage, binary
// condom use, age and CD4 count.
fs::path cervical_csv() {
  auto path = tmp_dir() / "cervical.csv";
  std::mt19937_64 g(42);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> u;
  const char* stages[] = {"normal", "ASCUS", "low", "high", "cancer"};
  std::ofstream f(path);
  f << "row_id,age,age2,cd4,condom,stage\n";
  for (int i = 0; i < 150; ++i) {
    double age = 20 + 40 * u(g);
    double cd4 = std::max(20.0, 450 + 150 * nd(g));
    double eta = 0.05 * (age - 40) - 0.002 * (cd4 - 450);
    int condom = u(g) < 1 / (1 + std::exp(eta)) ? 1 : 0;
    double v = u(g);
    int s = 0;
    for (double cut : {-0.5, 0.6, 1.5, 2.6})
      if (v > 1 / (1 + std::exp(-(cut - eta - 0.3 * condom)))) ++s;
    f << "p" << i << ',' << age << ',' << age * age / 100 << ',' << cd4 << ',' << condom << ','
      << stages[s] << '\n';
  }
  f << "p150,33,10.89,NA,1,low\n";
  return path;
}

const std::string kCervicalSchema = "condom:binary;stage:ordinal(normal<ASCUS<low<high<cancer)";

TEST(Cli, NoArgumentsPrintsUsage) {
  auto r = cli({});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("pcor"), std::string::npos);
  EXPECT_NE(r.err.find("scan"), std::string::npos);
}

TEST(Cli, VersionAndHelp) {
  auto v = cli({"--version"});
  EXPECT_EQ(v.code, 0);
  EXPECT_NE(v.out.find("psr-kit"), std::string::npos);
  EXPECT_EQ(cli({"--help"}).code, 0);
  EXPECT_EQ(cli({"pcor", "--bogus"}).code, 1);
}

TEST(Cli, UserErrorsExitOne) {
  auto data = cervical_csv().string();
  auto r = cli({"fit", "--data", data, "--schema", kCervicalSchema, "--model", "orm-logit(stage ~ nosuch)"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("nosuch"), std::string::npos);
  EXPECT_EQ(cli({"fit", "--data", "/nonexistent.csv", "--model", "linear(y ~ x)"}).code, 1);
  auto bad = cli({"fit", "--data", data, "--model", "orm-logit(stage ~ age +)"});
  EXPECT_EQ(bad.code, 1);
  auto noseed = cli({"pcor", "--data", data, "--schema", kCervicalSchema, "--x", "condom", "--y", "stage"});
  EXPECT_EQ(noseed.code, 1);
  EXPECT_NE(noseed.err.find("--seed"), std::string::npos);
}

TEST(Cli, PcorCervicalLike) {
  auto data = cervical_csv().string();
  auto out = (tmp_dir() / "pcor.csv").string();
  auto r = cli({"pcor", "--data", data, "--schema", kCervicalSchema, "--x", "condom", "--y", "stage",
                "--z", "age,age2,cd4", "--seed", "7", "--boot", "100", "--perm", "200", "--out", out});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("removed 1"), std::string::npos);
  auto rows = csv::parse(slurp(out));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0][1], "estimate");
  double est = std::stod(rows[1][1]);
  EXPECT_GE(est, -1.0);
  EXPECT_LE(est, 1.0);
  EXPECT_LE(std::stod(rows[1][2]), est);
  EXPECT_GE(std::stod(rows[1][3]), est);
  EXPECT_EQ(rows[1][5], "150");
  EXPECT_EQ(rows[1][9], "resampling");
}

TEST(Cli, PcorConditionalAndCovariance) {
  auto data = cervical_csv().string();
  auto r = cli({"pcor", "--data", data, "--schema", kCervicalSchema, "--x", "age", "--y", "stage",
                "--by", "condom", "--perm", "0", "--boot", "0"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto rows = csv::parse(r.out);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0][0], "z");
  EXPECT_EQ(rows[1][1], "conditional_spearman");
  auto c = cli({"pcor", "--data", data, "--schema", kCervicalSchema, "--x", "age", "--y", "stage",
                "--z", "cd4", "--method", "covariance", "--perm", "0", "--boot", "0"});
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_NE(c.out.find("psr_covariance"), std::string::npos);
}

TEST(Cli, FitPsrAndDiag) {
  auto data = cervical_csv().string();
  auto f = cli({"fit", "--data", data, "--schema", kCervicalSchema, "--model",
                "orm-logit(stage ~ age + pow(age,2) + log(cd4))", "--dump-dist", "1"});
  ASSERT_EQ(f.code, 0) << f.err;
  auto j = nlohmann::json::parse(f.out);
  EXPECT_TRUE(j["converged"].get<bool>());
  EXPECT_EQ(j["coefficients"].size(), 3u);
  EXPECT_TRUE(j.contains("aic"));
  EXPECT_EQ(j["distribution"]["points"].size(), 5u);

  auto p = cli({"psr", "--data", data, "--schema", kCervicalSchema, "--model", "orm-logit(stage ~ age)",
                "--normal"});
  ASSERT_EQ(p.code, 0) << p.err;
  auto rows = csv::parse(p.out);
  ASSERT_EQ(rows.size(), 152u);
  EXPECT_EQ(rows[0], (csv::Row{"row_id", "observed", "psr", "normal_psr"}));
  EXPECT_EQ(rows[1][0], "p0");
  double sum = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) sum += std::stod(rows[i][2]);
  EXPECT_LT(std::abs(sum), 1e-6);

  auto qq = (tmp_dir() / "qq.svg").string(), rbp = (tmp_dir() / "rbp.svg").string();
  auto d = cli({"diag", "--data", data, "--schema", kCervicalSchema, "--fit-spec", "linear(cd4 ~ age)",
                "--qq", qq, "--rbp", "predictor=age", rbp});
  ASSERT_EQ(d.code, 0) << d.err;
  EXPECT_NE(slurp(qq).find("<svg"), std::string::npos);
  EXPECT_NE(slurp(rbp).find("<polyline"), std::string::npos);
  EXPECT_NE(d.out.find("ks_p_value"), std::string::npos);
  auto dcsv = cli({"diag", "--data", data, "--schema", kCervicalSchema, "--fit-spec", "linear(cd4 ~ age)",
                   "--qq", qq, "--csv"});
  ASSERT_EQ(dcsv.code, 0) << dcsv.err;
  EXPECT_EQ(slurp(qq).rfind("theoretical,sample\n", 0), 0u);
}

TEST(Cli, NonConvergenceExitsTwo) {
  auto path = tmp_dir() / "poisson0.csv";
  std::ofstream(path) << "y,x\n0,1\n0,2\n0,3\n0,4\n";
  auto r = cli({"fit", "--data", path.string(), "--model", "poisson(y ~ x)"});
  EXPECT_EQ(r.code, 2);
}

struct ScanFiles {
  fs::path data, predictors;
};

ScanFiles scan_files(int columns) {
  auto dir = tmp_dir();
  ScanFiles f{dir / "scan_data.csv", dir / "scan_predictors.csv"};
  std::mt19937_64 g(9);
  std::normal_distribution<double> nd;
  std::uniform_int_distribution<int> geno(0, 2);
  const int n = 120;
  std::ofstream d(f.data), p(f.predictors);
  d << "y,age\n";
  for (int j = 0; j < columns; ++j) p << (j ? "," : "") << "snp" << j;
  p << '\n';
  for (int i = 0; i < n; ++i) {
    std::vector<int> s(columns);
    for (auto& v : s) v = geno(g);
    double age = 30 + 10 * nd(g);
    d << 0.02 * age + 0.8 * s[0] + nd(g) << ',' << age << '\n';
    for (int j = 0; j < columns; ++j) p << (j ? "," : "") << s[j];
    p << '\n';
  }
  return f;
}

TEST(Cli, ScanSortedAndDeterministic) {
  auto f = scan_files(40);
  auto out1 = (tmp_dir() / "scan1.csv").string(), out2 = (tmp_dir() / "scan2.csv").string();
  std::vector<std::string> base{"scan", "--data", f.data.string(), "--y", "y", "--z", "age",
                                "--predictors", f.predictors.string(), "--seed", "3", "--perm", "199"};
  auto a = base, b = base;
  a.insert(a.end(), {"--out", out1});
  b.insert(b.end(), {"--out", out2, "--threads", "3"});
  ASSERT_EQ(cli(a).code, 0);
  ASSERT_EQ(cli(b).code, 0);
  EXPECT_EQ(slurp(out1), slurp(out2));
  auto rows = csv::parse(slurp(out1));
  ASSERT_EQ(rows.size(), 41u);
  EXPECT_EQ(rows[1][1], "snp0");
  for (std::size_t i = 2; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i][0], std::to_string(i));
    EXPECT_LE(std::stod(rows[i - 1][3]), std::stod(rows[i][3]));
  }
  auto noseed = base;
  noseed.erase(noseed.begin() + 9, noseed.begin() + 11);
  EXPECT_EQ(cli(noseed).code, 1);
}

TEST(Cli, CorrelationMatrix) {
  auto path = tmp_dir() / "bio.csv";
  std::mt19937_64 g(5);
  std::normal_distribution<double> nd;
  {
    std::ofstream f(path);
    f << "z,a,b,c\n";
    for (int i = 0; i < 80; ++i) {
      double z = nd(g);
      f << z << ',' << z + nd(g) << ',' << z + nd(g) << ',' << nd(g) << '\n';
    }
  }
  auto prefix = (tmp_dir() / "mat").string();
  auto r = cli({"cormat", "--data", path.string(), "--columns", "a,b", "--perm", "0", "--out", prefix});
  ASSERT_EQ(r.code, 0) << r.err;
  auto est = csv::parse(slurp(prefix + "_estimates.csv"));
  ASSERT_EQ(est.size(), 3u);
  EXPECT_EQ(est[1][1], "1");
  EXPECT_EQ(est[2][2], "1");
  EXPECT_EQ(est[1][2], est[2][1]);
  Dataset d = load_csv(path.string(), {});
  EXPECT_EQ(std::stod(est[1][2]), spearman(d.column("a"), d.column("b")).estimate);

  auto adj = cli({"cormat", "--data", path.string(), "--columns", "a,b,c", "--z", "z", "--perm", "99",
                  "--seed", "1", "--out", prefix});
  ASSERT_EQ(adj.code, 0) << adj.err;
  auto m = csv::parse(slurp(prefix + "_estimates.csv"));
  // Shared dependence on z vanishes after adjustment.
  EXPECT_LT(std::abs(std::stod(m[2][1])), std::abs(std::stod(m[1][2])));
  auto p = csv::parse(slurp(prefix + "_pvalues.csv"));
  EXPECT_EQ(p[1][1], "NA");
}

TEST(CorrelationMatrix, AdjustmentShrinksSharedDependence) {
  std::mt19937_64 g(21);
  std::normal_distribution<double> nd;
  const int n = 300;
  std::vector<double> z(n);
  std::vector<std::vector<double>> b(5, std::vector<double>(n));
  for (int i = 0; i < n; ++i) {
    z[i] = nd(g);
    for (int k = 0; k < 5; ++k) b[k][i] = std::exp((0.5 + 0.3 * k) * z[i] + nd(g));
  }
  Dataset d;
  d.add(Column::continuous("z", z));
  std::vector<std::string> names;
  for (int k = 0; k < 5; ++k) {
    names.push_back("b" + std::to_string(k));
    d.add(Column::continuous(names.back(), b[k]));
  }
  auto zx = build_design(d, {Term::linear("z")});
  auto m = correlation_matrix(d, names, zx, MatrixConfig{});
  double unadj = 0, adj = 0;
  for (int i = 0; i < 5; ++i)
    for (int j = i + 1; j < 5; ++j) {
      unadj += std::abs(m.estimate[i][j]);
      adj += std::abs(m.estimate[j][i]);
    }
  EXPECT_LT(adj, unadj);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(m.estimate[i][i], 1.0);
  EXPECT_TRUE(m.failures.empty());
}

}  // namespace
