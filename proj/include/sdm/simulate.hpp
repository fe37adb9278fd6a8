#pragma once

#include "sdm/core.hpp"
#include "sdm/grid.hpp"
#include "sdm/models.hpp"
#include "sdm/survey.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

namespace sdm {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Substream tags, so e.g. the presence draws of replicate r never share bits
// with its survey draws.
enum class Stream : std::uint64_t {
  Presence = 1,
  Thinning = 2,
  Survey = 3,
  Distance = 4,
  Covariates = 5,
  Contamination = 6,
  Fisher = 7,
  User = 100,
};

inline std::uint64_t stream_key(std::uint64_t seed, std::uint64_t replicate, Stream tag) {
  return splitmix64(splitmix64(splitmix64(seed) ^ replicate) ^ static_cast<std::uint64_t>(tag));
}

// Counter-based 64-bit generator: output k is splitmix64(key + k * golden).
// Satisfies UniformRandomBitGenerator, so std distributions can drive it.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t key = 0) : key_(key) {}
  CounterRng(std::uint64_t seed, std::uint64_t replicate, Stream tag)
      : key_(stream_key(seed, replicate, tag)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return splitmix64(key_ + 0x9E3779B97F4A7C15ULL * counter_++); }

  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

inline long long poisson_draw(double mean, CounterRng& rng) {
  if (!(mean >= 0) || !std::isfinite(mean)) throw DomainError("invalid Poisson mean");
  if (mean == 0) return 0;
  std::poisson_distribution<long long> d(mean);
  return d(rng);
}

inline bool bernoulli_draw(double p, CounterRng& rng) { return rng.uniform() < p; }

// Row-major fill of independent N(0,1) draws.
inline Matrix normal_matrix(Index rows, Index cols, CounterRng& rng) {
  std::normal_distribution<double> nd;
  Matrix x(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) x(i, j) = nd(rng);
  }
  return x;
}

// Cell counts ~ Poisson(w_i exp(eta_i)).
inline Vector simulate_ppp(const Vector& log_intensity, const Vector& weights, CounterRng& rng) {
  Vector counts(log_intensity.size());
  for (Index i = 0; i < counts.size(); ++i) {
    const double eta = log_intensity(i);
    const double mean = eta == -kInf ? 0.0 : weights(i) * std::exp(eta);
    counts(i) = static_cast<double>(poisson_draw(mean, rng));
  }
  return counts;
}

inline Vector simulate_ppp(const LogLinearParams& truth, const CovariateGrid& grid, std::uint64_t seed,
                           std::uint64_t replicate = 0) {
  CounterRng rng(seed, replicate, Stream::Presence);
  return simulate_ppp(LogLinearFamily(grid).log_intensity(truth.packed()), grid.weights(), rng);
}

// Independent retention of each point with probability p_i of its cell.
inline Vector thin(const Vector& counts, const Vector& retain, CounterRng& rng) {
  if (retain.size() != counts.size()) throw DomainError("thin: size mismatch");
  Vector out(counts.size());
  for (Index i = 0; i < counts.size(); ++i) {
    const double p = retain(i);
    if (!(p >= 0.0 && p <= 1.0)) {
      throw DomainError("thin: retention probability outside [0,1] at cell index " + std::to_string(i));
    }
    const auto n = static_cast<long long>(counts(i));
    if (n == 0 || p == 0.0) {
      out(i) = 0;
    } else if (p == 1.0) {
      out(i) = static_cast<double>(n);
    } else {
      std::binomial_distribution<long long> d(n, p);
      out(i) = static_cast<double>(d(rng));
    }
  }
  return out;
}

// Plants extra presences uniformly among the cells whose log intensity is in
// the lowest `decile` fraction, so that they make up `fraction` of the result.
inline Vector contaminate(const Vector& counts, const Vector& log_intensity, double fraction,
                          CounterRng& rng, double decile = 0.1) {
  if (!(fraction >= 0 && fraction < 1)) throw DomainError("contamination fraction must be in [0,1)");
  if (!(decile > 0 && decile <= 1)) throw DomainError("contamination decile must be in (0,1]");
  const Index m = counts.size();
  std::vector<Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return log_intensity(a) < log_intensity(b); });
  const auto low = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(decile * static_cast<double>(m))));
  const auto planted = static_cast<long long>(std::llround(fraction / (1 - fraction) * counts.sum()));
  Vector out = counts;
  std::uniform_int_distribution<std::size_t> pick(0, low - 1);
  for (long long k = 0; k < planted; ++k) out(order[pick(rng)]) += 1;
  return out;
}

// Occupancy of each region ~ Bernoulli(1 - exp(-sum_{C_k} w lambda0)), then
// detections ~ Bernoulli(logistic(tau0 + tau'z)) on occupied regions.
inline SurveyData simulate_so(const Vector& log_lambda0, const Vector& weights,
                              const SurveyDesign& design, const Vector& tau, CounterRng& rng) {
  SurveyData data;
  data.y = Matrix::Zero(design.num_regions(), design.visits);
  for (Index k = 0; k < design.num_regions(); ++k) {
    double cum = 0;
    for (Index i : design.regions[static_cast<std::size_t>(k)]) cum += weights(i) * std::exp(log_lambda0(i));
    const double psi = -std::expm1(-cum);
    const bool occupied = bernoulli_draw(psi, rng);
    const Matrix& z = design.detection[static_cast<std::size_t>(k)];
    for (Index j = 0; j < design.visits; ++j) {
      // draw even when unoccupied so the stream position does not depend on psi
      const double u = rng.uniform();
      if (!occupied) continue;
      const double p = logistic(tau(0) + z.row(j).dot(tau.tail(tau.size() - 1)));
      data.y(k, j) = u < p ? 1.0 : 0.0;
    }
  }
  return data;
}

// sigma = exp(omega0 + omega'u), pi = exp(-d^2 / (2 sigma^2))
inline double half_normal(double distance, double log_sigma) {
  if (distance == 0.0) return 1.0;
  const double r = distance * std::exp(-log_sigma);
  return std::exp(-0.5 * r * r);
}

inline double ds_log_sigma(const Vector& omega, const Vector& u) {
  return omega(0) + u.dot(omega.tail(omega.size() - 1));
}

inline DsData simulate_ds(const Vector& log_lambda0, const DsArea& area, const Vector& omega,
                          CounterRng& rng) {
  if (omega.size() != 1 + area.scale.cols()) throw DomainError("simulate_ds: omega dimension mismatch");
  const Vector counts = simulate_ppp(log_lambda0, area.grid.weights(), rng);
  Vector retain(counts.size());
  for (Index i = 0; i < counts.size(); ++i) {
    retain(i) = half_normal(area.distance(i), ds_log_sigma(omega, area.scale.row(i).transpose()));
  }
  const Vector kept = thin(counts, retain, rng);
  DsData data;
  data.omega = omega;
  for (Index i = 0; i < kept.size(); ++i) {
    for (long long n = 0; n < static_cast<long long>(kept(i)); ++n) {
      data.points.push_back({i, area.distance(i), area.scale.row(i).transpose()});
    }
  }
  return data;
}

}  // namespace sdm
