#pragma once

#include "sdm/cli/config.hpp"
#include "sdm/cli/io.hpp"
#include "sdm/sdm.hpp"

#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

namespace sdm::cli {

class NonConvergence : public Error {
 public:
  using Error::Error;
};

inline GridSchema schema_from(const RunConfig& cfg) {
  GridSchema s;
  s.habitat = cfg.list("data.habitat");
  s.bias = cfg.list("data.bias");
  s.access = cfg.list("data.access");
  if (cfg.has("data.area")) s.area = cfg.num("data.area");
  s.standardize = cfg.flag("data.standardize", true);
  return s;
}

inline json schema_json(const GridSchema& s) {
  return {{"habitat", s.habitat}, {"bias", s.bias}, {"access", s.access},
          {"area", s.area ? json(*s.area) : json(nullptr)}, {"standardize", s.standardize}};
}

inline GridSchema schema_from(const json& j) {
  GridSchema s;
  s.habitat = j.at("habitat").get<std::vector<std::string>>();
  s.bias = j.at("bias").get<std::vector<std::string>>();
  s.access = j.at("access").get<std::vector<std::string>>();
  if (!j.at("area").is_null()) s.area = j.at("area").get<double>();
  s.standardize = j.at("standardize").get<bool>();
  return s;
}

inline json base_manifest(const RunConfig& cfg) {
  json m;
  m["tool"] = "sdm";
  m["command"] = cfg.command;
  m["versions"] = versions();
  m["seed"] = cfg.seed();
  json c = json::object();
  for (const auto& [k, v] : cfg.values()) {
    if (k != "run.out" && k != "run.workers") c[k] = v;
  }
  m["config"] = c;
  m["inputs"] = json::object();
  return m;
}

inline RunOutput make_output(const RunConfig& cfg, const std::string& default_dir, json manifest) {
  RunOutput out(cfg.str("run.out", default_dir));
  out.manifest = std::move(manifest);
  out.run = {{"out", out.dir()}, {"workers", cfg.workers()}};
  return out;
}

inline void record_input(json& manifest, const std::string& key, const std::string& path) {
  manifest["inputs"][key] = {{"path", path}, {"fnv1a64", hex64(fnv1a64(read_bytes(path)))}};
}

inline DivergenceSpec divergence_for(const std::string& method, const RunConfig& cfg) {
  if (method == "ppp") return DivergenceSpec::kl();
  if (method == "beta") return DivergenceSpec::beta_power(cfg.num("model.beta"));
  if (method == "gamma") return DivergenceSpec::gamma_power(cfg.num("model.gamma"));
  if (method == "ucdf" || method == "integrated-robust") {
    return DivergenceSpec::u_cdf(parse_cdf_family(cfg.str("model.cdf", "exp")), cfg.num("model.ucdf-tau"));
  }
  throw ConfigError("method '" + method + "' is not a divergence fit");
}

// ---------------------------------------------------------------------------
// Prediction from a fitted model description.

inline bool logistic_method(const std::string& m) { return m == "cc-logit" || m == "asym-logit"; }

// Standardized feature block of the columns a model was fitted on.
inline Matrix model_features(const json& model, const std::string& block, const Matrix& raw,
                             const std::vector<std::string>& names) {
  const auto cols = model.at(block + "_columns").get<std::vector<std::string>>();
  const Vector center = vector_from(model.at(block + "_center"));
  const Vector scale = vector_from(model.at(block + "_scale"));
  Matrix x(raw.rows(), static_cast<Index>(cols.size()));
  for (std::size_t a = 0; a < cols.size(); ++a) {
    const auto it = std::find(names.begin(), names.end(), cols[a]);
    if (it == names.end()) throw ValidationError("grid lacks the model column '" + cols[a] + "'");
    const auto k = static_cast<Index>(a);
    x.col(k) = (raw.col(it - names.begin()).array() - center(k)) / scale(k);
  }
  return x;
}

// Per-cell mapped value: habitat intensity, Maxent probability, or presence
// probability for the logistic fits.
inline Vector predict(const json& model, const Matrix& x) {
  const std::string method = model.at("method");
  const Vector params = vector_from(model.at("params"));
  if (method == "maxent") {
    const Vector u = x * params;
    return (u.array() - MaxentObjective::log_z(u)).exp();
  }
  if (method == "beta-maxent") {
    return deformed_log_probabilities({model.at("beta_ent").get<double>(), params}, x).array().exp();
  }
  const Index p = x.cols();
  const Vector eta = (x * params.segment(1, p)).array() + params(0);
  Vector out(eta.size());
  for (Index i = 0; i < eta.size(); ++i) {
    if (method == "cc-logit") {
      out(i) = logistic(eta(i));
    } else if (method == "asym-logit") {
      out(i) = 1.0 - 1.0 / (1.0 + model.at("kappa").get<double>() + std::exp(std::min(eta(i), 700.0)));
    } else {
      out(i) = std::exp(eta(i));
    }
  }
  return out;
}

// The grid a model was fitted on, reloaded without standardization.
inline CovariateGrid raw_grid(const json& model, const std::string& path) {
  GridSchema s = schema_from(model.at("schema"));
  s.standardize = false;
  if (model.at("source") == "ds-area") return load_ds_area(path, s).grid;
  return load_grid(path, s);
}

// ---------------------------------------------------------------------------
// fit

struct FitRun {
  Table coefs{"coefficients.csv", {"fit", "parameter", "estimate", "std_error", "original_scale"}, {}};
  Table metrics{"metrics.csv",
                {"fit", "converged", "iterations", "score_norm", "objective", "loglik", "aic", "tic", "auc",
                 "n_presence", "n_background"},
                {}};
  std::vector<Table> extra;
  json diagnostics = json::object();
  bool converged = true;
};

inline void add_coefs(FitRun& run, const std::string& label, const std::vector<std::string>& names,
                      const Vector& params, const Matrix& cov, Index habitat_dim, const FeatureTransform& tf) {
  Vector orig = Vector::Constant(params.size(), kNaN);
  if (habitat_dim > 0) {
    const auto [b0, b1] = tf.to_original(params(0), params.segment(1, habitat_dim - 1));
    orig(0) = b0;
    orig.segment(1, habitat_dim - 1) = b1;
  }
  for (Index k = 0; k < params.size(); ++k) {
    const double se = cov.rows() == params.size() && cov(k, k) >= 0 ? std::sqrt(cov(k, k)) : kNaN;
    const auto s = static_cast<std::size_t>(k);
    run.coefs.rows.push_back({label, s < names.size() ? names[s] : "p" + std::to_string(k), fmt(params(k)), fmt(se),
                              fmt(orig(k))});
  }
}

// Side fits (the separate PB and SO fits of an integrated run) are reported
// but do not decide the exit status.
inline void add_metrics(FitRun& run, const std::string& label, const FitResult& f, double auc_value,
                        const MetricReport& rep, bool gate = true) {
  run.metrics.rows.push_back({label, f.converged ? "true" : "false", std::to_string(f.iterations), fmt(f.score_norm),
                              fmt(f.objective), fmt(f.loglik), fmt(f.aic), fmt(f.tic), fmt(auc_value),
                              std::to_string(rep.n_presence), std::to_string(rep.n_background)});
  json d = {{"converged", f.converged},
            {"iterations", f.iterations},
            {"score_norm", num(f.score_norm)},
            {"ridge_stabilized", f.ridge_stabilized},
            {"separation", f.separation},
            {"message", f.message}};
  run.diagnostics[label] = d;
  if (gate) run.converged = run.converged && f.converged;
}

inline FeatureTransform subset_transform(const FeatureTransform& t, const std::vector<Index>& cols, Index total) {
  FeatureTransform full = t.empty() ? FeatureTransform::identity(total) : t;
  FeatureTransform out{Vector(static_cast<Index>(cols.size())), Vector(static_cast<Index>(cols.size()))};
  for (std::size_t a = 0; a < cols.size(); ++a) {
    out.center(static_cast<Index>(a)) = full.center(cols[a]);
    out.scale(static_cast<Index>(a)) = full.scale(cols[a]);
  }
  return out;
}

inline std::vector<std::string> column_names(const std::vector<std::string>& names, const std::vector<Index>& cols) {
  std::vector<std::string> out;
  for (Index c : cols) out.push_back(names.at(static_cast<std::size_t>(c)));
  return out;
}

inline std::vector<Index> all_columns(Index p) {
  std::vector<Index> c(static_cast<std::size_t>(p));
  std::iota(c.begin(), c.end(), Index{0});
  return c;
}

inline int run_fit(const RunConfig& cfg, std::ostream& log) {
  const std::string method = cfg.require("model.method");
  if (std::find(method_ids().begin(), method_ids().end(), method) == method_ids().end()) {
    throw ConfigError("unknown method '" + method + "'");
  }
  json manifest = base_manifest(cfg);
  const GridSchema schema = schema_from(cfg);
  const int workers = cfg.workers();
  FitOptions opts;

  CovariateGrid grid;
  DsArea area;
  DsData ds;
  std::string grid_path;
  if (method == "ds") {
    grid_path = cfg.input_path("data.ds-area");
    const std::string pts = cfg.input_path("data.ds-points");
    record_input(manifest, "data.ds-area", grid_path);
    record_input(manifest, "data.ds-points", pts);
    area = load_ds_area(grid_path, schema);
    ds = load_ds_points(pts, area);
    grid = area.grid;
  } else {
    grid_path = cfg.input_path("data.grid");
    record_input(manifest, "data.grid", grid_path);
    grid = load_grid(grid_path, schema);
  }

  FitRun run;
  json model;
  model["method"] = method;
  model["source"] = method == "ds" ? "ds-area" : "grid";
  model["path"] = grid_path;
  model["schema"] = schema_json(schema);
  std::vector<Index> cols = all_columns(grid.p());
  const FeatureTransform& xt = grid.habitat_transform();
  Vector params;
  FitResult main;  // metrics of the fit that produced `params`
  std::vector<std::string> main_names;
  Matrix main_cov;
  Index habitat_dim = 1 + grid.p();

  if (method == "ppp" || method == "beta" || method == "gamma" || method == "ucdf") {
    const DivergenceSpec spec = divergence_for(method, cfg);
    const Fitter fitter = [&](const CovariateGrid& g) { return fit_divergence(g, spec, opts); };
    if (cfg.flag("model.select", false)) {
      const auto sel = select_variables(grid, fitter, static_cast<int>(cfg.integer("model.max-exhaustive", 12)),
                                        workers);
      main = sel.fit;
      cols = sel.columns;
      Table t{"variables.csv", {"column", "selected"}, {}};
      for (Index j = 0; j < grid.p(); ++j) {
        const bool in = std::find(cols.begin(), cols.end(), j) != cols.end();
        t.rows.push_back({grid.names().x.at(static_cast<std::size_t>(j)), in ? "true" : "false"});
      }
      run.extra.push_back(t);
      run.diagnostics["selection"] = {{"criterion", num(sel.criterion)},
                                      {"evaluated", sel.evaluated},
                                      {"exhaustive", sel.exhaustive}};
    } else {
      main = fitter(grid);
    }
    habitat_dim = 1 + static_cast<Index>(cols.size());
  } else if (method == "maxent") {
    const MaxentFit mf = fit_maxent(grid, opts);
    main.method = "maxent";
    main.params = mf.alpha1;
    main.objective = mf.objective;
    main.loglik = -mf.objective;
    main.num_params = grid.p();
    main.aic = aic(main.loglik, main.num_params);
    main.score_norm = mf.score_norm;
    main.iterations = mf.iterations;
    main.converged = mf.converged;
    main.separation = mf.separation;
    main.message = mf.message;
    main.param_names = grid.names().x;
    habitat_dim = 0;
    run.diagnostics["theta0_equiv"] = num(mf.theta0_equiv);
    run.diagnostics["log_z"] = num(mf.log_z);
  } else if (method == "beta-maxent") {
    std::vector<double> betas = default_beta_grid();
    if (cfg.has("model.beta-grid")) {
      betas = *cfg.numbers("model.beta-grid");
    } else if (cfg.has("model.beta")) {
      betas = {cfg.num("model.beta")};
    }
    const BetaMaxentFit bm = fit_beta_maxent(grid, betas, opts);
    Table t{"beta_selection.csv", {"beta", "loss", "loglik", "tic", "converged", "selected"}, {}};
    for (std::size_t k = 0; k < bm.table.size(); ++k) {
      const auto& e = bm.table[k];
      t.rows.push_back({fmt(e.beta), fmt(e.loss), fmt(e.loglik), fmt(e.tic), e.converged ? "true" : "false",
                        k == bm.best_index ? "true" : "false"});
    }
    run.extra.push_back(t);
    const auto& best = bm.table.at(bm.best_index);
    main.method = "beta-maxent";
    main.params = best.alpha1;
    main.objective = best.loss;
    main.loglik = best.loglik;
    main.tic = best.tic;
    main.converged = best.converged;
    main.message = best.message;
    main.score_norm = kNaN;
    main.param_names = grid.names().x;
    model["beta_ent"] = bm.best.beta_ent;
    habitat_dim = 0;
  } else if (method == "iwlr" || method == "asym-logit" || method == "cc-logit") {
    WeightScheme scheme;
    if (method == "iwlr") {
      scheme = WeightScheme::infinite(cfg.num("model.weight", 1000.0));
    } else if (method == "asym-logit") {
      scheme = WeightScheme::asymmetric(cfg.num("model.kappa"));
      model["kappa"] = scheme.kappa;
    } else {
      const double n = grid.total_presence();
      const double bg = static_cast<double>((grid.counts().array() == 0).count());
      scheme = WeightScheme::case_control(cfg.num("model.mu"), cfg.num("model.ybar", n / (n + bg)));
    }
    main = fit_weighted_logistic(grid, scheme, opts);
  } else if (method == "ql-ppp") {
    std::vector<double> taus{-1.0, 0.0, 1.0};
    if (cfg.has("model.tau")) {
      taus = {cfg.num("model.tau")};
    } else if (cfg.has("model.tau-grid")) {
      taus = *cfg.numbers("model.tau-grid");
    }
    const QuasiLinearFit qf = fit_quasilinear_ppp(grid, taus, opts);
    Table t{"tau_selection.csv", {"tau", "loglik", "aic", "converged", "selected"}, {}};
    for (std::size_t k = 0; k < qf.table.size(); ++k) {
      const auto& e = qf.table[k];
      t.rows.push_back({fmt(e.tau), fmt(e.loglik), fmt(e.aic), e.converged ? "true" : "false",
                        k == qf.best_index ? "true" : "false"});
    }
    run.extra.push_back(t);
    main = qf.best_fit;
    model["tau"] = qf.best.tau;
    const FeatureTransform zt = grid.bias_transform();
    model["bias_columns"] = grid.names().z;
    const FeatureTransform zs = subset_transform(zt, all_columns(grid.q()), grid.q());
    model["bias_center"] = to_json(zs.center);
    model["bias_scale"] = to_json(zs.scale);
  } else if (method == "integrated" || method == "integrated-robust") {
    const std::string rp = cfg.input_path("data.regions"), sp = cfg.input_path("data.survey");
    record_input(manifest, "data.regions", rp);
    record_input(manifest, "data.survey", sp);
    const auto [design, data] = load_survey(rp, sp, grid);
    IntegratedOptions io;
    io.fit = opts;
    io.access_intercept = cfg.flag("model.access-intercept", false);
    io.fisher_replicates = static_cast<int>(cfg.integer("model.fisher-replicates", 100));
    if (io.fisher_replicates < 0) throw ConfigError("model.fisher-replicates must be nonnegative");
    io.seed = cfg.seed();
    io.workers = workers;
    const IntegratedFit f = method == "integrated"
                                ? fit_integrated(grid, design, data, io)
                                : fit_integrated_robust(grid, design, data,
                                                        CdfSpec{parse_cdf_family(cfg.str("model.cdf", "exp"))},
                                                        cfg.num("model.ucdf-tau"), io);
    main = f.integrated;
    for (const auto& [label, part] : {std::pair<const char*, const FitResult*>{"pb-only", &f.pb_only},
                                      {"so-only", &f.so_only}}) {
      add_coefs(run, label, part->param_names, part->params, part->covariance, habitat_dim, xt);
      add_metrics(run, label, *part, kNaN, MetricReport{}, false);
    }
    Table t{"fisher.csv", {"source", "block", "row", "col", "value"}, {}};
    auto dump = [&](const char* src, const char* block, const Matrix& m) {
      for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
          t.rows.push_back({src, block, std::to_string(i), std::to_string(j), fmt(m(i, j))});
        }
      }
    };
    auto additivity = [](const Matrix& pb, const Matrix& so, const Matrix& in) {
      return in.size() ? (in - pb - so).norm() / in.norm() : kNaN;
    };
    dump("observed", "pb", f.observed.pb);
    dump("observed", "so", f.observed.so);
    dump("observed", "integrated", f.observed.integrated);
    dump("monte-carlo", "pb", f.fisher_pb);
    dump("monte-carlo", "so", f.fisher_so);
    dump("monte-carlo", "integrated", f.fisher_integrated);
    run.extra.push_back(t);
    run.diagnostics["fisher_additivity"] = {
        {"observed", num(additivity(f.observed.pb, f.observed.so, f.observed.integrated))},
        {"monte_carlo", num(additivity(f.fisher_pb, f.fisher_so, f.fisher_integrated))}};
    run.diagnostics["warnings"] = f.warnings;
    for (const auto& w : f.warnings) log << "warning: " << w << '\n';
  } else if (method == "ds") {
    main = fit_ds(area, ds, opts);
  }

  params = main.params;
  main_names = main.param_names;
  main_cov = main.covariance;
  const FeatureTransform tf = subset_transform(xt, cols, grid.p());
  model["habitat_columns"] = column_names(grid.names().x, cols);
  model["habitat_center"] = to_json(tf.center);
  model["habitat_scale"] = to_json(tf.scale);
  model["params"] = to_json(params);
  model["param_names"] = main_names;
  model["aic"] = num(main.aic);
  model["tic"] = num(main.tic);

  const std::string label = method == "integrated" || method == "integrated-robust" ? "integrated" : method;
  if (method == "maxent") {
    // slopes only; original-scale slopes divide by the column scale
    Vector orig = params.cwiseQuotient(tf.scale);
    for (Index k = 0; k < params.size(); ++k) {
      run.coefs.rows.push_back({label, main_names.at(static_cast<std::size_t>(k)), fmt(params(k)), "", fmt(orig(k))});
    }
  } else {
    add_coefs(run, label, main_names, params, main_cov, habitat_dim, tf);
  }

  double auc_value = kNaN;
  MetricReport rep;
  Matrix x(grid.size(), static_cast<Index>(cols.size()));
  for (std::size_t a = 0; a < cols.size(); ++a) x.col(static_cast<Index>(a)) = grid.habitat().col(cols[a]);
  if (params.allFinite()) {
    try {
      auc_value = auc(predict(model, x), grid, &rep);
    } catch (const Error&) {
      // no presences or no empty cells in the grid: AUC undefined
    }
  }
  add_metrics(run, label, main, auc_value, rep);
  model["auc"] = num(auc_value);

  manifest["model"] = model;
  manifest["diagnostics"] = run.diagnostics;
  RunOutput out = make_output(cfg, "sdm_out", manifest);
  out.tables.push_back(run.coefs);
  out.tables.push_back(run.metrics);
  for (auto& t : run.extra) out.tables.push_back(t);
  const std::string h = out.write();
  log << "fit " << method << ": " << (run.converged ? "converged" : "NOT converged") << ", manifest " << h << '\n';
  if (!run.converged) throw NonConvergence(method + " fit did not converge (" + main.message + ")");
  return 0;
}

// ---------------------------------------------------------------------------
// map and evaluate

inline std::string fit_dir(const RunConfig& cfg) {
  const std::string d = cfg.require("input.fit");
  if (!std::filesystem::exists(std::filesystem::path(d) / "manifest.json")) {
    throw ConfigError("no fit manifest in '" + d + "'");
  }
  return d;
}

inline json fit_model(const json& fm) {
  if (!fm.contains("model") || fm.value("command", "") != "fit") {
    throw ConfigError("manifest is not from a fit run");
  }
  return fm.at("model");
}

inline int run_map(const RunConfig& cfg, std::ostream& log) {
  const std::string dir = fit_dir(cfg);
  json manifest = base_manifest(cfg);
  const json fm = read_manifest(dir);
  const json model = fit_model(fm);
  manifest["fit_manifest"] = fm.at("manifest_hash");
  const std::string path = cfg.has("data.grid") ? cfg.input_path("data.grid") : model.at("path").get<std::string>();
  record_input(manifest, "grid", path);
  const CovariateGrid g = raw_grid(model, path);
  const Vector value = predict(model, model_features(model, "habitat", g.habitat(), g.names().x));

  const Raster r = layout(g.lon(), g.lat());
  const std::vector<int> levels = gray_levels(value);
  manifest["raster"] = {{"width", r.width}, {"height", r.height}};
  manifest["value"] = logistic_method(model.at("method")) ? "probability"
                      : model.at("method") == "maxent" || model.at("method") == "beta-maxent"
                          ? "cell probability"
                          : "habitat intensity";
  RunOutput out = make_output(cfg, (std::filesystem::path(dir) / "map").string(), manifest);
  Table cells{"map.csv", {"id", "lon", "lat", "value"}, {}};
  Table pres{"presence.csv", {"id", "lon", "lat", "count"}, {}};
  for (Index i = 0; i < g.size(); ++i) {
    const std::string id = std::to_string(g.ids()[static_cast<std::size_t>(i)]);
    cells.rows.push_back({id, fmt(g.lon()(i)), fmt(g.lat()(i)), fmt(value(i))});
    if (g.counts()(i) > 0) pres.rows.push_back({id, fmt(g.lon()(i)), fmt(g.lat()(i)), fmt(g.counts()(i))});
  }
  out.tables = {cells, pres};
  out.files.emplace_back("map.pgm", pgm(r, levels, out.hash()));
  const std::string h = out.write();
  log << "map " << r.width << "x" << r.height << ", manifest " << h << '\n';
  return 0;
}

inline int run_evaluate(const RunConfig& cfg, std::ostream& log) {
  const std::string dir = fit_dir(cfg);
  json manifest = base_manifest(cfg);
  const json fm = read_manifest(dir);
  const json model = fit_model(fm);
  manifest["fit_manifest"] = fm.at("manifest_hash");
  const std::string path = cfg.has("data.grid") ? cfg.input_path("data.grid") : model.at("path").get<std::string>();
  record_input(manifest, "grid", path);
  const CovariateGrid g = raw_grid(model, path);
  const Vector value = predict(model, model_features(model, "habitat", g.habitat(), g.names().x));
  MetricReport rep;
  rep.auc = auc(value, g, &rep);
  auto get = [&](const char* k) { return model.at(k).is_null() ? kNaN : model.at(k).get<double>(); };
  Table t{"evaluation.csv", {"metric", "value"}, {}};
  t.rows = {{"auc", fmt(rep.auc)},
            {"n_presence", std::to_string(rep.n_presence)},
            {"n_background", std::to_string(rep.n_background)},
            {"aic", fmt(get("aic"))},
            {"tic", fmt(get("tic"))}};
  manifest["auc"] = num(rep.auc);
  RunOutput out = make_output(cfg, (std::filesystem::path(dir) / "evaluate").string(), manifest);
  out.tables = {t};
  const std::string h = out.write();
  log << "evaluate: auc " << fmt(rep.auc) << ", manifest " << h << '\n';
  return 0;
}

}  // namespace sdm::cli
