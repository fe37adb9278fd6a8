#include "test_util.hpp"

#include <atomic>
#include <set>

using namespace sdm;

namespace {

Vector vec(std::initializer_list<double> v) { return Vector::Map(std::data(v), static_cast<Index>(v.size())); }

// mean of x is within k standard errors of mu
void expect_mean(const std::vector<double>& x, double mu, double k = 3.0) {
  double m = 0, v = 0;
  for (double a : x) m += a;
  m /= static_cast<double>(x.size());
  for (double a : x) v += (a - m) * (a - m);
  v /= static_cast<double>(x.size() - 1);
  EXPECT_LT(std::abs(m - mu), k * std::sqrt(v / static_cast<double>(x.size()))) << "mean " << m << " vs " << mu;
}

}  // namespace

TEST(Rng, StreamsAreDistinctAndReproducible) {
  std::set<std::uint64_t> keys;
  for (std::uint64_t r = 0; r < 100; ++r) {
    for (Stream s : {Stream::Presence, Stream::Thinning, Stream::Survey, Stream::Distance}) keys.insert(stream_key(42, r, s));
  }
  EXPECT_EQ(keys.size(), 400u);
  CounterRng a(42, 3, Stream::Survey), b(42, 3, Stream::Survey);
  for (int k = 0; k < 100; ++k) EXPECT_EQ(a(), b());
  EXPECT_EQ(a.counter(), 100u);
  CounterRng u(1);
  for (int k = 0; k < 10000; ++k) {
    const double x = u.uniform();
    EXPECT_GE(x, 0.0);
    EXPECT_LT(x, 1.0);
  }
}

TEST(SimulatePpp, Deterministic) {
  const auto g = testutil::simulated_grid(500, {0.0, vec({0.5, -0.2})}, 3);
  const Vector a = simulate_ppp({0.0, vec({0.5, -0.2})}, g, 99, 4);
  const Vector b = simulate_ppp({0.0, vec({0.5, -0.2})}, g, 99, 4);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, simulate_ppp({0.0, vec({0.5, -0.2})}, g, 99, 5));
}

TEST(SimulatePpp, VanishingIntensityIsEmpty) {
  const CovariateGrid g(Vector::Ones(50), Matrix(50, 0), Vector::Zero(50));
  EXPECT_EQ(simulate_ppp({-800.0, Vector(0)}, g, 1).sum(), 0.0);
  CounterRng rng(2);
  EXPECT_EQ(simulate_ppp(Vector::Constant(50, -kInf), g.weights(), rng).sum(), 0.0);
}

TEST(SimulatePpp, PoissonMeanAndVariance) {
  // constant lambda = 2 over area 100 split into 20 cells
  const CovariateGrid g(Vector::Constant(20, 5.0), Matrix(20, 0), Vector::Zero(20));
  const int reps = 10000;
  std::vector<double> totals;
  for (int r = 0; r < reps; ++r) totals.push_back(simulate_ppp({std::log(2.0), Vector(0)}, g, 17, r).sum());
  double m = 0;
  for (double t : totals) m += t;
  m /= reps;
  // Monte-Carlo standard error of the mean is sqrt(200 / reps)
  EXPECT_LT(std::abs(m - 200.0), 3.0 * std::sqrt(200.0 / reps));
  double v = 0;
  for (double t : totals) v += (t - m) * (t - m);
  v /= reps - 1;
  // sd of the sample variance of a Poisson(200) is about sqrt(2 * 200^2 / reps)
  EXPECT_LT(std::abs(v - 200.0), 4.0 * std::sqrt(2.0 * 200.0 * 200.0 / reps));
}

TEST(SimulatePpp, DisjointRegionsUncorrelated) {
  const CovariateGrid g(Vector::Ones(10), Matrix(10, 0), Vector::Zero(10));
  const int reps = 10000;
  std::vector<double> a(reps), b(reps);
  for (int r = 0; r < reps; ++r) {
    const Vector c = simulate_ppp({std::log(3.0), Vector(0)}, g, 5, r);
    a[r] = c.head(5).sum();
    b[r] = c.tail(5).sum();
  }
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / reps;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / reps;
  double sab = 0, saa = 0, sbb = 0;
  for (int r = 0; r < reps; ++r) {
    sab += (a[r] - ma) * (b[r] - mb);
    saa += (a[r] - ma) * (a[r] - ma);
    sbb += (b[r] - mb) * (b[r] - mb);
  }
  EXPECT_LT(std::abs(sab / std::sqrt(saa * sbb)), 0.05);
}

TEST(Thin, BoundaryProbabilities) {
  const Vector c = vec({3, 0, 7, 1});
  CounterRng rng(8);
  EXPECT_EQ(thin(c, Vector::Zero(4), rng).sum(), 0.0);
  EXPECT_EQ(thin(c, Vector::Ones(4), rng), c);
  EXPECT_THROW(thin(c, Vector::Constant(4, 1.5), rng), DomainError);
  EXPECT_THROW(thin(c, Vector::Constant(4, -0.1), rng), DomainError);
  EXPECT_THROW(thin(c, Vector::Ones(3), rng), DomainError);
}

TEST(Thin, HalfRetentionAndSuperposition) {
  const CovariateGrid g(Vector::Constant(10, 10.0), Matrix(10, 0), Vector::Zero(10));
  const Vector p = Vector::Constant(10, 0.5);
  const Vector p2 = vec({0.1, 0.9, 0.3, 0.5, 0.7, 0.2, 0.4, 0.6, 0.8, 0.05});
  std::vector<double> kept, both;
  for (int r = 0; r < 10000; ++r) {
    const Vector c = simulate_ppp({0.0, Vector(0)}, g, 21, r);
    CounterRng t(21, r, Stream::Thinning);
    kept.push_back(thin(c, p, t).sum());
    // thin(lambda, p) + thin(lambda, 1 - p) on independent copies
    const Vector c2 = simulate_ppp({0.0, Vector(0)}, g, 22, r);
    both.push_back(thin(c, p2, t).sum() + thin(c2, (1.0 - p2.array()).matrix(), t).sum());
  }
  expect_mean(kept, 50.0);
  expect_mean(both, 100.0);
}

namespace {

SurveyDesign design(Index K, Index per, int T) {
  SurveyDesign d;
  d.visits = T;
  for (Index k = 0; k < K; ++k) {
    std::vector<Index> cells;
    for (Index i = 0; i < per; ++i) cells.push_back(k * per + i);
    d.regions.push_back(cells);
    d.detection.push_back(testutil::normal_features(T, 1, 40 + static_cast<std::uint64_t>(k)));
  }
  return d;
}

}  // namespace

TEST(SimulateSo, ZeroOccupancyGivesZeros) {
  const auto d = design(20, 3, 4);
  CounterRng rng(1);
  const auto data = simulate_so(Vector::Constant(60, -800.0), Vector::Ones(60), d, vec({5.0, 0.0}), rng);
  EXPECT_EQ(data.y.sum(), 0.0);
  EXPECT_EQ(data.y.rows(), 20);
  EXPECT_EQ(data.y.cols(), 4);
}

TEST(SimulateSo, CertainOccupancyHalfDetection) {
  const auto d = design(50, 2, 6);
  std::vector<double> rows;
  for (int r = 0; r < 200; ++r) {
    CounterRng rng(3, r, Stream::Survey);
    const auto data = simulate_so(Vector::Constant(100, 10.0), Vector::Ones(100), d, vec({0.0, 0.0}), rng);
    for (Index k = 0; k < 50; ++k) rows.push_back(data.y.row(k).sum());
  }
  expect_mean(rows, 3.0);
}

TEST(SimulateSo, DetectionFrequencyMatchesLogistic) {
  // one visit-level covariate value shared by all regions and visits
  SurveyDesign d;
  d.visits = 5;
  for (Index k = 0; k < 40; ++k) {
    d.regions.push_back({k});
    d.detection.push_back(Matrix::Constant(5, 1, 0.7));
  }
  const Vector tau = vec({-0.4, 1.2});
  const double p = logistic(-0.4 + 1.2 * 0.7);
  std::vector<double> freq;
  for (int r = 0; r < 500; ++r) {
    CounterRng rng(4, r, Stream::Survey);
    const auto data = simulate_so(Vector::Constant(40, 0.5), Vector::Ones(40), d, tau, rng);
    for (Index k = 0; k < 40; ++k) {
      // rows with a detection are occupied; among them, visits beyond the first detection are unbiased
      Index first = -1;
      for (Index j = 0; j < 5; ++j) {
        if (data.y(k, j) > 0) {
          first = j;
          break;
        }
      }
      if (first < 0 || first == 4) continue;
      freq.push_back(data.y.row(k).tail(4 - first).mean());
    }
  }
  expect_mean(freq, p);
}

TEST(SimulateSo, Deterministic) {
  const auto d = design(30, 2, 3);
  CounterRng a(11, 0, Stream::Survey), b(11, 0, Stream::Survey);
  const Vector eta = testutil::normal_features(60, 1, 2).col(0);
  EXPECT_EQ(simulate_so(eta, Vector::Ones(60), d, vec({0.2, 0.1}), a).y,
            simulate_so(eta, Vector::Ones(60), d, vec({0.2, 0.1}), b).y);
}

namespace {

DsArea flat_area(Index m, double dist) {
  DsArea a;
  a.grid = CovariateGrid(Vector::Ones(m), Matrix(m, 0), Vector::Zero(m));
  a.distance = Vector::Constant(m, dist);
  a.scale = Matrix(m, 0);
  return a;
}

}  // namespace

TEST(SimulateDs, FarAwayIsEmptyAndZeroDistanceKeepsAll) {
  CounterRng r1(6);
  EXPECT_TRUE(simulate_ds(Vector::Constant(30, 1.0), flat_area(30, 1e6), vec({0.0}), r1).points.empty());
  CounterRng r2(6), r3(6);
  const auto ds = simulate_ds(Vector::Constant(30, 1.0), flat_area(30, 0.0), vec({0.0}), r2);
  const Vector c = simulate_ppp(Vector::Constant(30, 1.0), Vector::Ones(30), r3);
  EXPECT_EQ(static_cast<double>(ds.points.size()), c.sum());
  EXPECT_THROW(simulate_ds(Vector::Constant(30, 1.0), flat_area(30, 0.0), vec({0.0, 1.0}), r2), DomainError);
}

TEST(SimulateDs, RetentionAtOneSigma) {
  // d = sigma = 2 everywhere
  const DsArea area = flat_area(10, 2.0);
  std::vector<double> frac;
  double kept = 0, total = 0;
  for (int r = 0; r < 10000; ++r) {
    CounterRng a(7, r, Stream::Distance), b(7, r, Stream::Distance);
    const auto ds = simulate_ds(Vector::Constant(10, std::log(3.0)), area, vec({std::log(2.0)}), a);
    const double n = simulate_ppp(Vector::Constant(10, std::log(3.0)), area.grid.weights(), b).sum();
    kept += static_cast<double>(ds.points.size());
    total += n;
    frac.push_back(static_cast<double>(ds.points.size()) - std::exp(-0.5) * n);
  }
  expect_mean(frac, 0.0);
  EXPECT_NEAR(kept / total, std::exp(-0.5), 0.01);
}

TEST(Contaminate, PlantsInLowestDecile) {
  const Vector eta = Vector::LinSpaced(100, -3.0, 3.0);
  const Vector c = Vector::Constant(100, 1.0);
  CounterRng rng(12);
  const Vector out = contaminate(c, eta, 0.1, rng);
  // 100 clean points, so round(100 / 9) = 11 planted
  EXPECT_EQ(out.sum(), 111.0);
  EXPECT_EQ(out.tail(90), c.tail(90));
  EXPECT_EQ(contaminate(c, eta, 0.0, rng), c);
  EXPECT_THROW(contaminate(c, eta, 1.0, rng), DomainError);
}

TEST(ParallelFor, IndexResultsIndependentOfWorkers) {
  std::vector<double> a(97), b(97);
  parallel_for(97, 1, [&](Index i) {
    CounterRng r(5, static_cast<std::uint64_t>(i), Stream::User);
    a[static_cast<std::size_t>(i)] = r.uniform();
  });
  parallel_for(97, 4, [&](Index i) {
    CounterRng r(5, static_cast<std::uint64_t>(i), Stream::User);
    b[static_cast<std::size_t>(i)] = r.uniform();
  });
  EXPECT_EQ(a, b);
  std::atomic<int> calls{0};
  EXPECT_THROW(parallel_for(50, 3,
                            [&](Index i) {
                              ++calls;
                              if (i == 7) throw DomainError("boom");
                            }),
               DomainError);
  parallel_for(0, 4, [&](Index) { FAIL(); });
}
