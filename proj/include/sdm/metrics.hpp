#pragma once

#include "sdm/core.hpp"
#include "sdm/divergence.hpp"
#include "sdm/grid.hpp"
#include "sdm/parallel.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace sdm {

struct MetricReport {
  double aic = kNaN;
  double tic = kNaN;
  double auc = kNaN;
  long long n_presence = 0;
  long long n_background = 0;
};

inline double aic(double loglik, Index k) { return 2.0 * static_cast<double>(k) - 2.0 * loglik; }

inline double aic(const FitResult& fit) {
  if (!std::isfinite(fit.loglik)) {
    throw ConfigError("AIC needs a likelihood fit; " + fit.method + " is an M-estimator, use tic()");
  }
  return aic(fit.loglik, fit.num_params);
}

inline double tic(const Matrix& bread, const Matrix& meat, double loss) { return tic_value(bread, meat, loss); }

inline double tic(const FitResult& fit) {
  if (fit.bread.size() == 0 || fit.meat.size() == 0) {
    throw DomainError("TIC needs the sandwich components of a converged fit");
  }
  return tic_value(fit.bread, fit.meat, fit.objective);
}

// Mann-Whitney AUC by rank sums with midranks for ties.
inline double auc(const std::vector<double>& pres, const std::vector<double>& bg) {
  if (pres.empty() || bg.empty()) throw ValidationError("AUC needs nonempty presence and background sets");
  const std::size_t n1 = pres.size(), n = pres.size() + bg.size();
  std::vector<std::pair<double, bool>> all;
  all.reserve(n);
  for (double s : pres) all.emplace_back(s, true);
  for (double s : bg) all.emplace_back(s, false);
  for (const auto& a : all) {
    if (std::isnan(a.first)) throw ValidationError("AUC scores must not be NaN");
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && all[j].first == all[i].first) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (all[k].second) rank_sum += mid;
    }
    i = j;
  }
  const double u = rank_sum - 0.5 * static_cast<double>(n1) * static_cast<double>(n1 + 1);
  return u / (static_cast<double>(n1) * static_cast<double>(bg.size()));
}

// Presence points (repeated by count) against zero-count cells as pseudo-absences.
inline double auc(const Vector& scores, const CovariateGrid& grid, MetricReport* report = nullptr) {
  if (scores.size() != grid.size()) throw DomainError("AUC scores do not match the grid");
  std::vector<double> pres, bg;
  for (Index i = 0; i < grid.size(); ++i) {
    const auto c = static_cast<long long>(grid.counts()(i));
    if (c > 0) {
      pres.insert(pres.end(), static_cast<std::size_t>(c), scores(i));
    } else {
      bg.push_back(scores(i));
    }
  }
  if (report) {
    report->n_presence = static_cast<long long>(pres.size());
    report->n_background = static_cast<long long>(bg.size());
  }
  return auc(pres, bg);
}

inline MetricReport evaluate_fit(const FitResult& fit, const Vector& scores, const CovariateGrid& grid) {
  MetricReport r;
  if (std::isfinite(fit.loglik)) r.aic = aic(fit);
  if (fit.bread.size() > 0 && fit.meat.size() > 0) {
    try {
      r.tic = tic(fit);
    } catch (const DomainError&) {
    }
  }
  r.auc = auc(scores, grid, &r);
  return r;
}

// ---------------------------------------------------------------------------
// Variable selection over habitat columns.

struct SelectionResult {
  std::vector<Index> columns;  // selected habitat columns
  double criterion = kInf;
  FitResult fit;
  Index evaluated = 0;
  bool exhaustive = true;
};

inline CovariateGrid select_columns(const CovariateGrid& grid, const std::vector<Index>& cols) {
  Matrix x(grid.size(), static_cast<Index>(cols.size()));
  FeatureNames names = grid.names();
  std::vector<std::string> xn;
  for (std::size_t a = 0; a < cols.size(); ++a) {
    x.col(static_cast<Index>(a)) = grid.habitat().col(cols[a]);
    const auto s = static_cast<std::size_t>(cols[a]);
    xn.push_back(s < grid.names().x.size() ? grid.names().x[s] : "x" + std::to_string(cols[a] + 1));
  }
  names.x = xn;
  CovariateGrid out(grid.weights(), x, grid.counts(), grid.area(), grid.bias(), grid.access());
  out.set_metadata(grid.ids(), grid.lon(), grid.lat(), names);
  return out;
}

using Fitter = std::function<FitResult(const CovariateGrid&)>;

// AIC for likelihood fits and TIC otherwise; +inf for failed fits.
inline double selection_criterion(const FitResult& fit) {
  if (!fit.converged) return kInf;
  if (std::isfinite(fit.loglik)) return aic(fit);
  return std::isfinite(fit.tic) ? fit.tic : kInf;
}

// Best subset when p <= max_exhaustive, greedy backward elimination otherwise.
inline SelectionResult select_variables(const CovariateGrid& grid, const Fitter& fitter, int max_exhaustive = 12,
                                        int workers = 1) {
  const Index p = grid.p();
  SelectionResult best;
  auto consider = [&](const std::vector<Index>& cols, FitResult fit) {
    const double crit = selection_criterion(fit);
    ++best.evaluated;
    if (crit < best.criterion) {
      best.criterion = crit;
      best.columns = cols;
      best.fit = std::move(fit);
    }
  };
  if (p <= max_exhaustive) {
    const Index subsets = Index{1} << p;
    std::vector<std::vector<Index>> cols(static_cast<std::size_t>(subsets));
    std::vector<FitResult> fits(static_cast<std::size_t>(subsets));
    parallel_for(subsets, workers, [&](Index mask) {
      auto& c = cols[static_cast<std::size_t>(mask)];
      for (Index j = 0; j < p; ++j) {
        if (mask & (Index{1} << j)) c.push_back(j);
      }
      try {
        fits[static_cast<std::size_t>(mask)] = fitter(select_columns(grid, c));
      } catch (const DomainError& e) {
        fits[static_cast<std::size_t>(mask)].message = e.what();
      }
    });
    // scanned in mask order so ties resolve the same way for any worker count
    for (Index mask = 0; mask < subsets; ++mask) {
      consider(cols[static_cast<std::size_t>(mask)], std::move(fits[static_cast<std::size_t>(mask)]));
    }
    return best;
  }
  best.exhaustive = false;
  std::vector<Index> current(static_cast<std::size_t>(p));
  std::iota(current.begin(), current.end(), Index{0});
  consider(current, fitter(select_columns(grid, current)));
  for (;;) {
    const double before = best.criterion;
    std::vector<Index> keep = best.columns;
    for (std::size_t drop = 0; drop < keep.size(); ++drop) {
      std::vector<Index> trial = keep;
      trial.erase(trial.begin() + static_cast<std::ptrdiff_t>(drop));
      try {
        consider(trial, fitter(select_columns(grid, trial)));
      } catch (const DomainError&) {
      }
    }
    if (!(best.criterion < before) || best.columns.empty()) break;
  }
  return best;
}

}  // namespace sdm
