#pragma once

#include "sdm/sdm.hpp"

#include <gtest/gtest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>

namespace testutil {

using sdm::Index;
using sdm::Matrix;
using sdm::Vector;

inline Matrix normal_features(Index m, Index p, std::uint64_t seed) {
  sdm::CounterRng rng(seed, 0, sdm::Stream::Covariates);
  std::normal_distribution<double> nd;
  Matrix x(m, p);
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < p; ++j) x(i, j) = nd(rng);
  }
  return x;
}

// Grid of m equal cells over `area` with N(0,1) features and counts drawn from
// the log-linear truth.
inline sdm::CovariateGrid simulated_grid(Index m, const sdm::LogLinearParams& truth, std::uint64_t seed,
                                         double area = 0.0, std::uint64_t replicate = 0) {
  if (area <= 0) area = static_cast<double>(m);
  const Matrix x = normal_features(m, truth.theta1.size(), seed);
  sdm::CovariateGrid g(Vector::Constant(m, area / static_cast<double>(m)), x, Vector::Zero(m), area);
  return g.with_counts(sdm::simulate_ppp(truth, g, seed, replicate));
}

// PB + SO data from theta = [beta (1+p), alpha (r, no intercept), tau (1+dz)].
// m unit-weight cells with N(0,1) habitat and access features; K regions of
// `per_region` consecutive cells, each visited T times with one N(0,1)
// detection covariate. Features depend on `seed` only, data on `replicate`.
struct Scenario {
  sdm::CovariateGrid grid;
  sdm::SurveyDesign design;
  sdm::SurveyData data;
  Vector theta;
};

inline Scenario integrated_scenario(Index m, Index p, Index K, Index per_region, int T, const Vector& theta,
                                    std::uint64_t seed, std::uint64_t replicate = 0) {
  Scenario s;
  const Matrix x = normal_features(m, p, seed);
  const Matrix v = normal_features(m, 1, seed + 1000);
  const sdm::CovariateGrid g0(Vector::Ones(m), x, Vector::Zero(m), 0.0, {}, v);
  s.design.visits = T;
  const Matrix z = normal_features(K * T, 1, seed + 2000);
  for (Index k = 0; k < K; ++k) {
    std::vector<Index> cells;
    for (Index i = 0; i < per_region; ++i) cells.push_back(k * per_region + i);
    s.design.regions.push_back(cells);
    s.design.detection.push_back(z.middleRows(k * T, T));
  }
  sdm::ThinnedFamily fam(g0);
  const Index nb = 1 + p, na = 1;
  sdm::CounterRng prng(seed, replicate, sdm::Stream::Presence);
  s.grid = g0.with_counts(sdm::simulate_ppp(fam.log_intensity(theta.head(nb + na)), g0.weights(), prng));
  sdm::CounterRng srng(seed, replicate, sdm::Stream::Survey);
  s.data = sdm::simulate_so(fam.log_lambda0(theta.head(nb)), g0.weights(), s.design, theta.tail(theta.size() - nb - na),
                            srng);
  s.theta = theta;
  return s;
}

// Central differences of a scalar function.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h = 1e-6) {
  Vector g(x.size());
  for (Index j = 0; j < x.size(); ++j) {
    Vector a = x, b = x;
    a(j) += h;
    b(j) -= h;
    g(j) = (f(a) - f(b)) / (2 * h);
  }
  return g;
}

// max_j |a_j - b_j| / max(1, |b_j|)
inline double rel_err(const Vector& a, const Vector& b) {
  double e = 0;
  for (Index j = 0; j < a.size(); ++j) e = std::max(e, std::abs(a(j) - b(j)) / std::max(1.0, std::abs(b(j))));
  return e;
}

// Minimizes f over [lo, hi]^2 by exhaustive search: a coarse pass, then a
// 1e-3 lattice in a window around the coarse minimum.
inline Vector grid_search_2d(const std::function<double(double, double)>& f, double lo, double hi,
                             double step = 1e-3) {
  double best = sdm::kInf, ba = lo, bb = lo;
  const double coarse = 0.02;
  for (double a = lo; a <= hi + 1e-12; a += coarse) {
    for (double b = lo; b <= hi + 1e-12; b += coarse) {
      const double v = f(a, b);
      if (v < best) best = v, ba = a, bb = b;
    }
  }
  const double a0 = ba, b0 = bb;
  const int half = static_cast<int>(std::lround(3 * coarse / step));
  for (int i = -half; i <= half; ++i) {
    for (int j = -half; j <= half; ++j) {
      const double a = a0 + i * step, b = b0 + j * step;
      if (a < lo || a > hi || b < lo || b > hi) continue;
      const double v = f(a, b);
      if (v < best) best = v, ba = a, bb = b;
    }
  }
  Vector out(2);
  out << ba, bb;
  return out;
}

inline std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "sdm_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

inline std::string write_file(const std::string& name, const std::string& content) {
  const std::string path = temp_path(name);
  std::ofstream(path) << content;
  return path;
}

}  // namespace testutil
