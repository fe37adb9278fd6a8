#pragma once

#include "sdm/cli/fit.hpp"

#include <optional>
#include <string>
#include <vector>

namespace sdm::cli {

// Synthetic study area shared by `simulate` and `study`. Covariates depend on
// the seed only, so replicates differ in their counts and detections.
struct World {
  CovariateGrid grid;  // counts zero
  Vector beta, alpha, tau;
  bool access_intercept = false;
  bool survey = false;
  SurveyDesign design;
  Vector log_lambda0, log_pb;
  double contamination = 0.0;
  // distance sampling
  bool has_ds = false;
  DsArea ds;
  Vector omega, ds_log_lambda0;
};

inline World build_world(const RunConfig& cfg) {
  World w;
  w.beta = cfg.vector("truth.beta");
  const Index p = w.beta.size() - 1;
  const Index m = cfg.integer("sim.cells", 1000);
  if (m < 1) throw ConfigError("sim.cells must be positive");
  const double area = cfg.num("sim.area", static_cast<double>(m));
  if (!(area > 0)) throw ConfigError("sim.area must be positive");
  w.contamination = cfg.num("sim.contamination", 0.0);
  if (!(w.contamination >= 0 && w.contamination < 1)) throw ConfigError("sim.contamination must lie in [0, 1)");
  w.access_intercept = cfg.flag("model.access-intercept", false);
  const std::uint64_t seed = cfg.seed();
  CounterRng rng(seed, 0, Stream::Covariates);

  const Matrix x = normal_matrix(m, p, rng);
  Matrix v(m, 0);
  if (cfg.has("truth.alpha")) {
    w.alpha = cfg.vector("truth.alpha");
    const Index r = w.alpha.size() - (w.access_intercept ? 1 : 0);
    if (r < 0) throw ConfigError("truth.alpha is empty");
    v = normal_matrix(m, r, rng);
  }
  const Index width = static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(m))));
  const Index height = (m + width - 1) / width;
  std::vector<long long> ids(static_cast<std::size_t>(m));
  Vector lon(m), lat(m);
  for (Index i = 0; i < m; ++i) {
    ids[static_cast<std::size_t>(i)] = i + 1;
    lon(i) = static_cast<double>(i % width);
    lat(i) = static_cast<double>(height - 1 - i / width);
  }
  FeatureNames names;
  for (Index j = 0; j < p; ++j) names.x.push_back("x" + std::to_string(j + 1));
  for (Index j = 0; j < v.cols(); ++j) names.v.push_back("v_" + std::to_string(j + 1));
  w.grid = CovariateGrid(Vector::Constant(m, area / static_cast<double>(m)), x, Vector::Zero(m), area, Matrix(m, 0), v);
  w.grid.set_metadata(ids, lon, lat, names);

  w.log_lambda0 = LogLinearFamily(w.grid).log_intensity(w.beta);
  w.log_pb = w.log_lambda0;
  if (w.alpha.size() > 0) {
    ThinnedFamily fam(w.grid, w.access_intercept);
    Vector theta(w.beta.size() + w.alpha.size());
    theta << w.beta, w.alpha;
    w.log_pb = fam.log_intensity(theta);
  }

  const Index k = cfg.integer("sim.regions", 0);
  if (k > 0) {
    w.survey = true;
    w.tau = cfg.vector("truth.tau");
    const Index per = cfg.integer("sim.cells-per-region", 5);
    const int visits = static_cast<int>(cfg.integer("sim.visits", 4));
    if (per < 1 || visits < 1) throw ConfigError("sim.cells-per-region and sim.visits must be positive");
    if (k * per > m) throw ConfigError("survey regions need more cells than the grid has");
    w.design.visits = visits;
    const Matrix z = normal_matrix(k * visits, w.tau.size() - 1, rng);
    for (Index r = 0; r < k; ++r) {
      std::vector<Index> cells(static_cast<std::size_t>(per));
      std::iota(cells.begin(), cells.end(), r * per);
      w.design.regions.push_back(cells);
      w.design.detection.push_back(z.middleRows(r * visits, visits));
    }
    w.design.validate(m);
  }

  const Index nd = cfg.integer("sim.ds-cells", 0);
  if (nd > 0) {
    w.has_ds = true;
    w.omega = cfg.vector("truth.omega");
    const Matrix xd = normal_matrix(nd, p, rng);
    const Matrix u = normal_matrix(nd, w.omega.size() - 1, rng);
    // detections fade out well inside 2.5 sigma of the baseline scale
    const double reach = 2.5 * std::exp(w.omega(0));
    Vector d(nd);
    for (Index i = 0; i < nd; ++i) d(i) = reach * rng.uniform();
    std::vector<long long> dids(static_cast<std::size_t>(nd));
    std::iota(dids.begin(), dids.end(), 1LL);
    FeatureNames dn;
    dn.x = names.x;
    w.ds.grid = CovariateGrid(Vector::Ones(nd), xd, Vector::Zero(nd));
    w.ds.grid.set_metadata(dids, Vector::Constant(nd, kNaN), Vector::Constant(nd, kNaN), dn);
    w.ds.distance = d;
    w.ds.scale = u;
    w.ds_log_lambda0 = LogLinearFamily(w.ds.grid).log_intensity(w.beta);
  }
  return w;
}

struct Replicate {
  CovariateGrid grid;  // PB counts
  SurveyData so;
  DsData ds;
};

inline Replicate draw(const World& w, std::uint64_t seed, std::uint64_t rep) {
  Replicate out;
  CounterRng pr(seed, rep, Stream::Presence);
  Vector counts = simulate_ppp(w.log_pb, w.grid.weights(), pr);
  if (w.contamination > 0) {
    CounterRng cr(seed, rep, Stream::Contamination);
    counts = contaminate(counts, w.log_lambda0, w.contamination, cr);
  }
  out.grid = w.grid.with_counts(counts);
  if (w.survey) {
    CounterRng sr(seed, rep, Stream::Survey);
    out.so = simulate_so(w.log_lambda0, w.grid.weights(), w.design, w.tau, sr);
  }
  if (w.has_ds) {
    CounterRng dr(seed, rep, Stream::Distance);
    out.ds = simulate_ds(w.ds_log_lambda0, w.ds, w.omega, dr);
  }
  return out;
}

// ---------------------------------------------------------------------------
// simulate

inline std::vector<std::string> grid_row(const CovariateGrid& g, Index i) {
  std::vector<std::string> r{std::to_string(g.ids()[static_cast<std::size_t>(i)]), fmt(g.counts()(i)),
                             fmt(g.weights()(i))};
  if (g.lon().allFinite()) {
    r.push_back(fmt(g.lon()(i)));
    r.push_back(fmt(g.lat()(i)));
  }
  for (Index j = 0; j < g.p(); ++j) r.push_back(fmt(g.habitat()(i, j)));
  for (Index j = 0; j < g.r(); ++j) r.push_back(fmt(g.access()(i, j)));
  return r;
}

inline std::vector<std::string> grid_header(const CovariateGrid& g) {
  std::vector<std::string> h{"id", "presence", "w"};
  if (g.lon().allFinite()) {
    h.push_back("lon");
    h.push_back("lat");
  }
  for (const auto& n : g.names().x) h.push_back(n);
  for (const auto& n : g.names().v) h.push_back(n);
  return h;
}

inline int run_simulate(const RunConfig& cfg, std::ostream& log) {
  json manifest = base_manifest(cfg);
  const World w = build_world(cfg);
  const auto rep = static_cast<std::uint64_t>(cfg.integer("sim.replicate", 0));
  const Replicate d = draw(w, cfg.seed(), rep);
  manifest["replicate"] = rep;
  manifest["presence_stream"] = hex64(stream_key(cfg.seed(), rep, Stream::Presence));

  RunOutput out = make_output(cfg, "sdm_out", json::object());
  Table grid{"grid.csv", grid_header(d.grid), {}};
  for (Index i = 0; i < d.grid.size(); ++i) grid.rows.push_back(grid_row(d.grid, i));
  out.tables.push_back(grid);

  Table truth{"truth.csv", {"block", "index", "value"}, {}};
  auto add = [&](const char* block, const Vector& v) {
    for (Index k = 0; k < v.size(); ++k) truth.rows.push_back({block, std::to_string(k), fmt(v(k))});
  };
  add("beta", w.beta);
  add("alpha", w.alpha);
  add("tau", w.tau);
  add("omega", w.omega);
  out.tables.push_back(truth);

  if (w.survey) {
    Table regions{"regions.csv", {"region_id", "cell_id"}, {}};
    std::vector<std::string> sh{"region_id", "visit", "y"};
    for (Index j = 0; j < w.design.detection_dim(); ++j) sh.push_back("z" + std::to_string(j + 1));
    Table survey{"survey.csv", sh, {}};
    for (Index k = 0; k < w.design.num_regions(); ++k) {
      for (Index i : w.design.regions[static_cast<std::size_t>(k)]) {
        regions.rows.push_back({std::to_string(k + 1), std::to_string(w.grid.ids()[static_cast<std::size_t>(i)])});
      }
      const Matrix& z = w.design.detection[static_cast<std::size_t>(k)];
      for (int t = 0; t < w.design.visits; ++t) {
        std::vector<std::string> r{std::to_string(k + 1), std::to_string(t + 1), fmt(d.so.y(k, t))};
        for (Index j = 0; j < z.cols(); ++j) r.push_back(fmt(z(t, j)));
        survey.rows.push_back(r);
      }
    }
    out.tables.push_back(regions);
    out.tables.push_back(survey);
  }
  if (w.has_ds) {
    std::vector<std::string> ah = grid_header(w.ds.grid);
    ah.push_back("distance");
    for (Index j = 0; j < w.ds.scale.cols(); ++j) ah.push_back("u_" + std::to_string(j + 1));
    Table area{"ds_area.csv", ah, {}};
    for (Index i = 0; i < w.ds.grid.size(); ++i) {
      auto r = grid_row(w.ds.grid, i);
      r.push_back(fmt(w.ds.distance(i)));
      for (Index j = 0; j < w.ds.scale.cols(); ++j) r.push_back(fmt(w.ds.scale(i, j)));
      area.rows.push_back(r);
    }
    std::vector<std::string> ph{"point_id", "cell_id", "distance"};
    for (Index j = 0; j < w.ds.scale.cols(); ++j) ph.push_back("u_" + std::to_string(j + 1));
    Table pts{"ds_points.csv", ph, {}};
    for (std::size_t k = 0; k < d.ds.points.size(); ++k) {
      const auto& pt = d.ds.points[k];
      std::vector<std::string> r{std::to_string(k + 1), std::to_string(w.ds.grid.ids()[static_cast<std::size_t>(pt.cell)]),
                                 fmt(pt.distance)};
      for (Index j = 0; j < pt.scale.size(); ++j) r.push_back(fmt(pt.scale(j)));
      pts.rows.push_back(r);
    }
    out.tables.push_back(area);
    out.tables.push_back(pts);
    manifest["ds_detections"] = d.ds.points.size();
  }
  manifest["n_presence"] = d.grid.total_presence();
  out.manifest = manifest;
  const std::string h = out.write();
  log << "simulate: " << d.grid.total_presence() << " presences on " << d.grid.size() << " cells, manifest " << h
      << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// study

struct Estimate {
  Vector est, se;
  std::vector<std::string> names;
};

inline std::optional<Estimate> usable(const FitResult& f) {
  if (!f.converged || !f.params.allFinite()) return std::nullopt;
  Estimate e;
  e.est = f.params;
  e.names = f.param_names;
  e.se = Vector::Constant(f.params.size(), kNaN);
  if (f.covariance.rows() == f.params.size()) e.se = f.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  return e;
}

inline const std::vector<std::string>& study_estimators() {
  static const std::vector<std::string> s{"ppp", "beta", "gamma", "ucdf", "integrated", "integrated-robust"};
  return s;
}

inline int run_study(const RunConfig& cfg, std::ostream& log) {
  const long long reps = cfg.integer("study.replicates");
  if (reps <= 0) throw ValidationError("study.replicates must be positive, got " + std::to_string(reps));
  std::vector<std::string> estimators = cfg.list("study.estimators");
  if (estimators.empty()) estimators = {"ppp"};
  bool needs_survey = false;
  for (const auto& e : estimators) {
    if (std::find(study_estimators().begin(), study_estimators().end(), e) == study_estimators().end()) {
      throw ConfigError("study cannot run estimator '" + e + "'");
    }
    if (e == "integrated" || e == "integrated-robust") needs_survey = true;
    if (e != "ppp" && e != "integrated") divergence_for(e, cfg);  // checks method parameters up front
  }
  const World w = build_world(cfg);
  if (needs_survey && (!w.survey || w.alpha.size() == 0)) {
    throw ConfigError("integrated estimators need truth.alpha, truth.tau and sim.regions > 0");
  }

  // labels in report order with their truth vectors
  std::vector<std::pair<std::string, Vector>> labels;
  auto cat = [](const Vector& a, const Vector& b) {
    Vector v(a.size() + b.size());
    v << a, b;
    return v;
  };
  for (const auto& e : estimators) {
    if (e == "integrated") {
      labels.emplace_back("integrated", cat(cat(w.beta, w.alpha), w.tau));
      labels.emplace_back("pb-only", cat(w.beta, w.alpha));
      labels.emplace_back("so-only", cat(w.beta, w.tau));
    } else if (e == "integrated-robust") {
      labels.emplace_back(e, cat(cat(w.beta, w.alpha), w.tau));
    } else {
      labels.emplace_back(e, w.beta);
    }
  }
  const std::size_t nl = labels.size();
  const std::uint64_t seed = cfg.seed();
  std::vector<std::vector<std::optional<Estimate>>> results(static_cast<std::size_t>(reps),
                                                            std::vector<std::optional<Estimate>>(nl));
  std::vector<std::string> notes(static_cast<std::size_t>(reps));
  std::vector<double> npres(static_cast<std::size_t>(reps), 0.0);

  parallel_for(static_cast<Index>(reps), cfg.workers(), [&](Index r) {
    const auto ri = static_cast<std::size_t>(r);
    auto& row = results[ri];
    const Replicate d = draw(w, seed, static_cast<std::uint64_t>(r));
    npres[ri] = d.grid.total_presence();
    IntegratedOptions io;
    io.access_intercept = w.access_intercept;
    io.fisher_replicates = 0;
    std::size_t slot = 0;
    for (const auto& e : estimators) {
      const std::size_t width = e == "integrated" ? 3 : 1;
      try {
        if (e == "integrated" || e == "integrated-robust") {
          const IntegratedFit f =
              e == "integrated"
                  ? fit_integrated(d.grid, w.design, d.so, io)
                  : fit_integrated_robust(d.grid, w.design, d.so,
                                          CdfSpec{parse_cdf_family(cfg.str("model.cdf", "exp"))},
                                          cfg.num("model.ucdf-tau"), io);
          row[slot] = usable(f.integrated);
          if (width == 3) {
            row[slot + 1] = usable(f.pb_only);
            row[slot + 2] = usable(f.so_only);
          }
        } else {
          row[slot] = usable(fit_divergence(d.grid, divergence_for(e, cfg)));
        }
      } catch (const Error& ex) {
        notes[ri] += (notes[ri].empty() ? "" : "; ") + e + ": " + ex.what();
      }
      slot += width;
    }
  });

  Table report{"study.csv",
               {"estimator", "parameter", "truth", "replicates_ok", "failures", "mean_estimate", "mean_bias", "emp_sd",
                "mean_se", "coverage", "variance_ratio"},
               {}};
  // per-label empirical variances, used for the integrated variance ratio
  std::vector<Vector> variances(nl);
  std::vector<std::vector<std::string>> names(nl);
  std::vector<long long> ok(nl, 0);
  std::vector<Vector> means(nl), mean_se(nl), cover(nl);
  for (std::size_t l = 0; l < nl; ++l) {
    const Vector& truth = labels[l].second;
    const Index k = truth.size();
    Vector s = Vector::Zero(k), s2 = Vector::Zero(k), se = Vector::Zero(k), cv = Vector::Zero(k);
    Vector nse = Vector::Zero(k);
    for (const auto& row : results) {
      if (!row[l]) continue;
      const Estimate& e = *row[l];
      if (e.est.size() != k) continue;
      if (names[l].empty()) names[l] = e.names;
      ++ok[l];
      s += e.est;
      for (Index j = 0; j < k; ++j) {
        if (!std::isfinite(e.se(j))) continue;
        nse(j) += 1;
        se(j) += e.se(j);
        cv(j) += std::abs(e.est(j) - truth(j)) <= 1.959963984540054 * e.se(j) ? 1.0 : 0.0;
      }
    }
    const double n = static_cast<double>(ok[l]);
    means[l] = n > 0 ? Vector(s / n) : Vector::Constant(k, kNaN);
    for (const auto& row : results) {
      if (row[l] && row[l]->est.size() == k) s2 += (row[l]->est - means[l]).array().square().matrix();
    }
    variances[l] = n > 1 ? Vector(s2 / (n - 1)) : Vector::Constant(k, kNaN);
    mean_se[l] = se.cwiseQuotient(nse);
    cover[l] = cv.cwiseQuotient(nse);
  }
  auto find_label = [&](const std::string& s) -> std::optional<std::size_t> {
    for (std::size_t l = 0; l < nl; ++l) {
      if (labels[l].first == s) return l;
    }
    return std::nullopt;
  };
  const Index nb = w.beta.size();
  json failures = json::object();
  for (std::size_t l = 0; l < nl; ++l) {
    const auto& [label, truth] = labels[l];
    const long long fails = reps - ok[l];
    failures[label] = fails;
    for (Index j = 0; j < truth.size(); ++j) {
      double ratio = kNaN;
      if (label == "integrated" && j < nb) {
        const auto a = find_label("pb-only"), b = find_label("so-only");
        ratio = variances[l](j) / std::min(variances[*a](j), variances[*b](j));
      }
      const auto s = static_cast<std::size_t>(j);
      report.rows.push_back({label, s < names[l].size() ? names[l][s] : "p" + std::to_string(j), fmt(truth(j)),
                             std::to_string(ok[l]), std::to_string(fails), fmt(means[l](j)),
                             fmt(means[l](j) - truth(j)), fmt(std::sqrt(variances[l](j))), fmt(mean_se[l](j)),
                             fmt(cover[l](j)), fmt(ratio)});
    }
  }

  Table seeds{"replicates.csv", {"replicate", "presence_stream", "n_presence", "failed"}, {}};
  long long all_failed = 0;
  for (long long r = 0; r < reps; ++r) {
    const auto ri = static_cast<std::size_t>(r);
    std::string failed;
    for (std::size_t l = 0; l < nl; ++l) {
      if (!results[ri][l]) failed += (failed.empty() ? "" : ";") + labels[l].first;
    }
    if (!failed.empty() && !notes[ri].empty()) failed += " (" + notes[ri] + ")";
    seeds.rows.push_back({std::to_string(r), hex64(stream_key(seed, static_cast<std::uint64_t>(r), Stream::Presence)),
                          fmt(npres[ri]), failed});
  }
  for (std::size_t l = 0; l < nl; ++l) all_failed += ok[l] == 0 ? 1 : 0;

  json manifest = base_manifest(cfg);
  manifest["replicates"] = reps;
  manifest["failures"] = failures;
  RunOutput out = make_output(cfg, "sdm_out", manifest);
  out.tables = {report, seeds};
  const std::string h = out.write();
  log << "study: " << reps << " replicates, " << nl << " estimator rows, manifest " << h << '\n';
  for (const auto& [label, f] : failures.items()) {
    if (f.get<long long>() > 0) log << "  " << label << ": " << f.get<long long>() << " failed replicate(s)\n";
  }
  if (all_failed == static_cast<long long>(nl)) throw NonConvergence("every replicate failed for every estimator");
  return 0;
}

}  // namespace sdm::cli
