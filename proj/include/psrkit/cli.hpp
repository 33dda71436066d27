#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "data_model.hpp"
#include "diagnostics.hpp"
#include "error.hpp"
#include "estimators.hpp"
#include "model_spec.hpp"
#include "psr.hpp"
#include "rank_association.hpp"

namespace psrkit {

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Correlation matrix: upper triangle unadjusted, lower triangle adjusted.

struct MatrixConfig {
  FitterSpec model = FitterSpec::orm();
  Resampling resampling;
};

struct CorrelationMatrix {
  std::vector<std::string> names;
  std::vector<std::vector<double>> estimate;
  std::vector<std::vector<double>> p_value;
  std::vector<std::string> failures;
};

/// Entry (i, j) with i < j is spearman(b_i, b_j); entry (i, j) with i > j is
/// the partial Spearman correlation given Z. Pairs whose fits fail are left NaN.
inline CorrelationMatrix correlation_matrix(const Dataset& d, const std::vector<std::string>& names,
                                            const DesignMatrix& z, const MatrixConfig& cfg) {
  require(names.size() >= 2, "correlation matrix needs at least two columns");
  const std::size_t k = names.size();
  CorrelationMatrix m;
  m.names = names;
  m.estimate.assign(k, std::vector<double>(k, stats::kNaN));
  m.p_value.assign(k, std::vector<double>(k, stats::kNaN));
  for (std::size_t i = 0; i < k; ++i) m.estimate[i][i] = 1.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      const Column& a = d.column(names[i]);
      const Column& b = d.column(names[j]);
      Resampling rs = cfg.resampling;
      rs.seed = splitmix64(cfg.resampling.seed ^ splitmix64(i * k + j));
      try {
        auto r = spearman(a, b, rs);
        m.estimate[i][j] = r.estimate;
        m.p_value[i][j] = r.p_value;
      } catch (const std::exception& e) {
        m.failures.push_back(names[i] + "," + names[j] + " unadjusted: " + e.what());
      }
      try {
        auto r = partial_spearman(a, b, z, cfg.model, cfg.model, rs);
        m.estimate[j][i] = r.estimate;
        m.p_value[j][i] = r.p_value;
      } catch (const std::exception& e) {
        m.failures.push_back(names[i] + "," + names[j] + " adjusted: " + e.what());
      }
    }
  return m;
}

inline void write_matrix_csv(const std::vector<std::string>& names,
                             const std::vector<std::vector<double>>& v, std::ostream& out) {
  csv::Row header{""};
  header.insert(header.end(), names.begin(), names.end());
  csv::write_row(out, header);
  for (std::size_t i = 0; i < names.size(); ++i) {
    csv::Row row{names[i]};
    for (double x : v[i]) row.push_back(format_double(x));
    csv::write_row(out, row);
  }
}

// ---------------------------------------------------------------------------

namespace cli_detail {

struct Common {
  std::string data;
  std::string schema;
};

inline Schema load_schema(const std::string& arg) {
  if (arg.empty()) return {};
  std::error_code ec;
  if (std::filesystem::is_regular_file(arg, ec)) return parse_schema(csv::read_file(arg));
  return parse_schema(arg);
}

inline std::vector<std::string> split_list(const std::string& s) {
  return detail::split_top(s, ",");
}

// Opens `path` for writing, or returns `fallback` when the path is empty.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) : out_(&fallback) {
    if (!path.empty()) {
      file_.open(path, std::ios::binary);
      if (!file_) throw UserError("cannot write '" + path + "'");
      out_ = &file_;
    }
  }
  std::ostream& get() { return *out_; }

 private:
  std::ofstream file_;
  std::ostream* out_;
};

struct Prepared {
  Dataset data;
  DesignMatrix design;
};

inline Prepared prepare(const Common& c, const std::vector<std::string>& extra_cols,
                        const std::vector<Term>& terms, std::ostream& err) {
  Dataset d = load_csv(c.data, load_schema(c.schema));
  auto cols = referenced_columns("", terms);
  for (const auto& e : extra_cols)
    if (std::find(cols.begin(), cols.end(), e) == cols.end()) cols.push_back(e);
  auto cc = complete_cases(d, cols);
  if (cc.removed) err << "note: removed " << cc.removed << " row(s) with missing values\n";
  DesignMatrix x = build_design(cc.data, terms);
  return {std::move(cc.data), std::move(x)};
}

inline void write_assoc_header(std::ostream& out, bool with_z) {
  csv::Row h;
  if (with_z) h.push_back("z");
  for (const char* s : {"method", "estimate", "ci_low", "ci_high", "p_value", "n_used", "bootstrap",
                        "permutations", "seed", "inference"})
    h.push_back(s);
  csv::write_row(out, h);
}

inline void write_assoc_row(std::ostream& out, const AssocResult& r,
                            const std::optional<std::string>& z = std::nullopt) {
  csv::Row row;
  if (z) row.push_back(*z);
  row.push_back(method_name(r.method));
  row.push_back(format_double(r.estimate));
  row.push_back(format_double(r.ci_low));
  row.push_back(format_double(r.ci_high));
  row.push_back(format_double(r.p_value));
  row.push_back(std::to_string(r.n_used));
  row.push_back(std::to_string(r.resampling.bootstrap));
  row.push_back(std::to_string(r.resampling.permutations));
  row.push_back(std::to_string(r.resampling.seed));
  row.push_back("resampling");
  csv::write_row(out, row);
}

inline ModelFit fit_spec(const ModelSpec& spec, const Column& y, const DesignMatrix& x) {
  return fit_with(spec.fitter, y, x);
}

}  // namespace cli_detail

/// Runs the psr-kit command line. Returns 0 on success, 1 on user error,
/// 2 on numerical failure.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  using namespace cli_detail;
  CLI::App app{"psr-kit: probability-scale residuals, diagnostics and rank association", "psr-kit"};
  app.set_version_flag("--version", std::string("psr-kit ") + kVersion);
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--data", common.data, "input CSV file")->required();
    sub->add_option("--schema", common.schema,
                    "column kinds, inline or as a file (e.g. 'stage:ordinal(a<b<c);os:surv(t,d)')");
  };

  // fit
  std::string model, out_path;
  int dump_row = 0;
  auto* fit_cmd = app.add_subcommand("fit", "fit a model and print a JSON summary");
  add_common(fit_cmd);
  fit_cmd->add_option("--model", model, "model spec, e.g. 'orm-logit(y ~ age + rcs(bmi,3))'")->required();
  fit_cmd->add_option("--out", out_path, "output JSON file (default stdout)");
  fit_cmd->add_option("--dump-dist", dump_row, "include the fitted distribution of this 1-based row");

  // psr
  bool normal_scores = false;
  auto* psr_cmd = app.add_subcommand("psr", "write per-row probability-scale residuals as CSV");
  add_common(psr_cmd);
  psr_cmd->add_option("--model", model, "model spec")->required();
  psr_cmd->add_option("--out", out_path, "output CSV file (default stdout)");
  psr_cmd->add_flag("--normal", normal_scores, "add the normal-scale transform of each residual");

  // diag
  std::string qq_path;
  std::vector<std::string> rbp;
  bool as_csv = false;
  double span = 2.0 / 3.0;
  auto* diag_cmd = app.add_subcommand("diag", "QQ and residual-by-predictor diagnostics");
  add_common(diag_cmd);
  diag_cmd->add_option("--fit-spec", model, "model spec")->required();
  diag_cmd->add_option("--qq", qq_path, "QQ plot against Uniform(-1,1)");
  diag_cmd->add_option("--rbp", rbp, "residual-by-predictor plot: predictor=NAME PATH (repeatable)")
      ->expected(2)
      ->take_all();
  diag_cmd->add_flag("--csv", as_csv, "write plot data as CSV instead of SVG");
  diag_cmd->add_option("--span", span, "lowess span");

  // pcor
  std::string x_name, y_name, z_terms, by, method = "partial";
  std::string x_model = "orm-logit", y_model = "orm-logit";
  std::size_t boot = 1000, perm = 1000, threads = 1;
  std::optional<std::uint64_t> seed;
  std::optional<double> bandwidth;
  auto* pcor_cmd = app.add_subcommand("pcor", "partial / conditional Spearman correlation via PSRs");
  add_common(pcor_cmd);
  pcor_cmd->add_option("--x", x_name, "first variable")->required();
  pcor_cmd->add_option("--y", y_name, "second variable")->required();
  pcor_cmd->add_option("--z", z_terms, "covariate terms, comma separated");
  pcor_cmd->add_option("--x-model", x_model, "empirical|linear|linear-empirical|orm-<link>|poisson|exp-surv");
  pcor_cmd->add_option("--y-model", y_model, "as --x-model");
  pcor_cmd->add_option("--method", method, "partial|covariance")->check(CLI::IsMember({"partial", "covariance"}));
  pcor_cmd->add_option("--by", by, "conditional correlation within levels / along a continuous variable");
  pcor_cmd->add_option("--bandwidth", bandwidth, "kernel bandwidth for continuous --by");
  pcor_cmd->add_option("--boot", boot, "bootstrap replicates (0 disables)");
  pcor_cmd->add_option("--perm", perm, "permutations (0 disables)");
  pcor_cmd->add_option("--seed", seed, "random seed (required when resampling)");
  pcor_cmd->add_option("--out", out_path, "output CSV file (default stdout)");

  // scan
  std::string predictors_path;
  std::string scan_y_model = "linear-empirical";
  auto* scan_cmd = app.add_subcommand("scan", "partial Spearman of one outcome with many predictors");
  add_common(scan_cmd);
  scan_cmd->add_option("--y", y_name, "outcome column")->required();
  scan_cmd->add_option("--y-model", scan_y_model, "outcome model (default linear-empirical)");
  scan_cmd->add_option("--z", z_terms, "covariate terms, comma separated");
  scan_cmd->add_option("--predictors", predictors_path, "CSV of predictor columns, rows aligned with --data")->required();
  scan_cmd->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  scan_cmd->add_option("--perm", perm, "permutations per predictor");
  scan_cmd->add_option("--seed", seed, "random seed")->required();
  scan_cmd->add_option("--out", out_path, "output CSV file (default stdout)");

  // cormat
  std::string biomarkers;
  std::size_t mat_boot = 0;
  auto* mat_cmd = app.add_subcommand("cormat", "unadjusted / adjusted Spearman correlation matrix");
  add_common(mat_cmd);
  mat_cmd->add_option("--columns", biomarkers, "columns, comma separated")->required();
  mat_cmd->add_option("--z", z_terms, "covariate terms, comma separated");
  mat_cmd->add_option("--model", x_model, "margin model for the adjusted triangle");
  mat_cmd->add_option("--boot", mat_boot, "bootstrap replicates per pair");
  mat_cmd->add_option("--perm", perm, "permutations per pair");
  mat_cmd->add_option("--seed", seed, "random seed");
  mat_cmd->add_option("--out", out_path, "output prefix: writes PREFIX_estimates.csv and PREFIX_pvalues.csv")->required();

  if (argc <= 1) {
    err << app.help();
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (fit_cmd->parsed()) {
      auto spec = parse_model_spec(model);
      auto prep = prepare(common, {spec.response}, spec.terms, err);
      const Column& y = prep.data.column(spec.response);
      ModelFit fit = fit_spec(spec, y, prep.design);
      auto j = fit.summary();
      j["model"] = model;
      if (dump_row > 0) {
        require(static_cast<std::size_t>(dump_row) <= prep.data.n(), "--dump-dist row out of range");
        j["distribution"] = predict_distribution(fit, prep.design, dump_row - 1).to_json();
      }
      Sink sink(out_path, out);
      sink.get() << j.dump(2) << '\n';
      if (!fit.usable()) {
        err << "error: fit did not converge (gradient max-norm " << fit.gradient_norm << ")\n";
        return 2;
      }
      return 0;
    }

    if (psr_cmd->parsed()) {
      auto spec = parse_model_spec(model);
      auto prep = prepare(common, {spec.response}, spec.terms, err);
      const Column& y = prep.data.column(spec.response);
      ModelFit fit = fit_spec(spec, y, prep.design);
      if (!fit.usable()) throw NumericalError("fit did not converge");
      auto r = psr_all(fit, y, prep.design);
      std::vector<std::string> warnings;
      std::vector<double> z;
      if (normal_scores) z = normal_transform(r, &warnings);
      for (const auto& w : warnings) err << "warning: " << w << '\n';
      Sink sink(out_path, out);
      csv::Row h{"row_id", "observed", "psr"};
      if (normal_scores) h.push_back("normal_psr");
      csv::write_row(sink.get(), h);
      for (std::size_t i = 0; i < r.size(); ++i) {
        std::string obs = y.kind == Kind::ordinal ? y.levels[static_cast<std::size_t>(y.values[i])]
                                                  : format_double(y.values[i]);
        if (y.kind == Kind::right_censored) obs += y.events[i] ? "" : "+";
        csv::Row row{prep.data.row_id(i), obs, format_double(r[i])};
        if (normal_scores)
          row.push_back(std::isinf(z[i]) ? (z[i] > 0 ? "Inf" : "-Inf") : format_double(z[i]));
        csv::write_row(sink.get(), row);
      }
      return 0;
    }

    if (diag_cmd->parsed()) {
      auto spec = parse_model_spec(model);
      std::vector<std::string> extra{spec.response};
      std::vector<std::pair<std::string, std::string>> plots;
      for (std::size_t i = 0; i + 1 < rbp.size(); i += 2) {
        std::string name = rbp[i];
        if (name.starts_with("predictor=")) name = name.substr(10);
        plots.emplace_back(name, rbp[i + 1]);
        extra.push_back(name);
      }
      require(!qq_path.empty() || !plots.empty(), "diag: nothing to do; give --qq and/or --rbp");
      auto prep = prepare(common, extra, spec.terms, err);
      const Column& y = prep.data.column(spec.response);
      ModelFit fit = fit_spec(spec, y, prep.design);
      if (!fit.usable()) throw NumericalError("fit did not converge");
      auto r = psr_all(fit, y, prep.design);
      bool discrete = y.kind != Kind::continuous && y.kind != Kind::right_censored;
      if (!qq_path.empty()) {
        auto qq = qq_uniform(r, discrete);
        for (const auto& w : qq.warnings) err << "warning: " << w << '\n';
        detail::write_text(as_csv ? plot_csv(qq) : render_svg(qq), qq_path);
        if (r.size() >= 8) {
          auto ks = ks_uniform(r, discrete);
          out << nlohmann::json{{"ks_statistic", ks.statistic}, {"ks_p_value", ks.p_value}}.dump()
              << '\n';
        }
      }
      for (const auto& [name, path] : plots) {
        auto plot = residual_by_predictor(r, prep.data.column(name), span);
        detail::write_text(as_csv ? plot_csv(plot) : render_svg(plot), path);
      }
      return 0;
    }

    if (pcor_cmd->parsed()) {
      bool resampling = boot > 0 || perm > 0;
      require(!resampling || seed.has_value(), "--seed is required when --boot or --perm is nonzero");
      auto terms = parse_terms(z_terms);
      std::vector<std::string> extra{x_name, y_name};
      if (!by.empty()) extra.push_back(by);
      auto prep = prepare(common, extra, terms, err);
      Resampling rs{boot, perm, seed.value_or(0)};
      const Column& x = prep.data.column(x_name);
      const Column& y = prep.data.column(y_name);
      Sink sink(out_path, out);
      if (!by.empty()) {
        require(terms.empty(), "--by and --z cannot be combined");
        ConditionalConfig cfg;
        cfg.bandwidth = bandwidth;
        cfg.x_model = FitterSpec::parse(x_model);
        cfg.y_model = FitterSpec::parse(y_model);
        cfg.resampling = rs;
        auto pts = conditional_spearman(x, y, prep.data.column(by), cfg);
        write_assoc_header(sink.get(), true);
        for (const auto& pt : pts)
          write_assoc_row(sink.get(), pt.result, pt.label.empty() ? format_double(pt.z) : pt.label);
        return 0;
      }
      auto xm = FitterSpec::parse(x_model), ym = FitterSpec::parse(y_model);
      auto r = method == "covariance" ? psr_covariance(x, y, prep.design, xm, ym, rs)
                                      : partial_spearman(x, y, prep.design, xm, ym, rs);
      for (const auto& w : r.warnings)
        if (w.find("bootstrap") != std::string::npos) err << "warning: " << w << '\n';
      write_assoc_header(sink.get(), false);
      write_assoc_row(sink.get(), r);
      return 0;
    }

    if (scan_cmd->parsed()) {
      auto terms = parse_terms(z_terms);
      auto prep = prepare(common, {y_name}, terms, err);
      Dataset preds = load_csv(predictors_path, {});
      require(preds.n() == load_csv(common.data, load_schema(common.schema)).n(),
              "--predictors rows must align with --data rows");
      // Rows dropped for missing outcome / covariates are dropped from predictors too.
      Dataset full = load_csv(common.data, load_schema(common.schema));
      std::vector<std::size_t> keep;
      auto cols = referenced_columns(y_name, terms);
      for (std::size_t i = 0; i < full.n(); ++i) {
        bool ok = true;
        for (const auto& c : cols) ok = ok && !full.column(c).missing(i);
        if (ok) keep.push_back(i);
      }
      Dataset aligned = preds.subset(keep);
      BatchConfig cfg;
      cfg.y_model = FitterSpec::parse(scan_y_model);
      cfg.permutations = perm;
      cfg.seed = *seed;
      cfg.threads = threads;
      auto rows = batch_partial_spearman(prep.data.column(y_name), prep.design, aligned.columns, cfg);
      Sink sink(out_path, out);
      csv::write_row(sink.get(), {"rank", "name", "estimate", "p_value", "n_used", "status"});
      std::size_t rank = 0;
      for (auto i : rank_by_p(rows)) {
        const auto& r = rows[i];
        csv::write_row(sink.get(), {std::to_string(++rank), r.name, format_double(r.estimate),
                                    format_double(r.p_value), std::to_string(r.n_used), r.status});
      }
      return 0;
    }

    if (mat_cmd->parsed()) {
      require(mat_boot + perm == 0 || seed.has_value(), "--seed is required when resampling");
      auto names = split_list(biomarkers);
      auto terms = parse_terms(z_terms);
      auto prep = prepare(common, names, terms, err);
      MatrixConfig cfg{FitterSpec::parse(x_model), Resampling{mat_boot, perm, seed.value_or(0)}};
      auto m = correlation_matrix(prep.data, names, prep.design, cfg);
      for (const auto& f : m.failures) err << "warning: " << f << '\n';
      Sink est(out_path + "_estimates.csv", out);
      write_matrix_csv(m.names, m.estimate, est.get());
      Sink pv(out_path + "_pvalues.csv", out);
      write_matrix_csv(m.names, m.p_value, pv.get());
      return 0;
    }
  } catch (const UserError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  std::vector<const char*> argv{"psr-kit"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace psrkit
