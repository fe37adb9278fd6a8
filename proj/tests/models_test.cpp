#include "test_util.hpp"

using namespace sdm;

namespace {

Cell make_cell(std::initializer_list<double> x, std::initializer_list<double> z = {}) {
  Cell c;
  c.x = Vector::Map(std::data(x), static_cast<Index>(x.size()));
  c.z = Vector::Map(std::data(z), static_cast<Index>(z.size()));
  return c;
}

Vector vec(std::initializer_list<double> v) { return Vector::Map(std::data(v), static_cast<Index>(v.size())); }

}  // namespace

TEST(EvalLogLinear, Examples) {
  EXPECT_NEAR(eval_loglinear({std::log(2.0), vec({0.0})}, make_cell({3.0})), 2.0, 1e-15);
  EXPECT_NEAR(eval_loglinear({0.0, vec({1.0, -1.0})}, make_cell({1.0, 1.0})), 1.0, 1e-15);
  EXPECT_NEAR(eval_loglinear({1.0, vec({0.5})}, make_cell({2.0})), 7.389056098930650, 1e-12);
}

TEST(EvalLogLinear, OverflowFlagsCell) {
  Cell c = make_cell({1000.0});
  c.id = 42;
  try {
    eval_loglinear({0.0, vec({1.0})}, c);
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("42"), std::string::npos);
  }
  EXPECT_THROW(eval_loglinear({0.0, vec({1.0, 2.0})}, make_cell({1.0})), DomainError);
}

TEST(EvalQuasiLinear, NamedMeans) {
  // lambda = 4, b = 1
  QuasiLinearParams p{0.0, vec({std::log(4.0), 0.0}), vec({0.0})};
  const Cell c = make_cell({0.7});
  EXPECT_NEAR(eval_quasilinear(p, c), 2.0, 1e-14);
  p.tau = 1.0;
  EXPECT_NEAR(eval_quasilinear(p, c), 2.5, 1e-14);
  p.tau = -1.0;
  EXPECT_NEAR(eval_quasilinear(p, c), 1.6, 1e-14);
  // generic tau is continuous with the sentinels
  p.tau = 1e-7;
  EXPECT_NEAR(eval_quasilinear(p, c), 2.0, 1e-6);
  p.tau = 1.0 - 1e-9;
  EXPECT_NEAR(eval_quasilinear(p, c), 2.5, 1e-7);
}

TEST(EvalQuasiLinear, MeanBoundsAndMonotoneInTau) {
  sdm::CounterRng rng(11);
  for (int k = 0; k < 500; ++k) {
    const double la = 6 * rng.uniform() - 3, lb = 6 * rng.uniform() - 3;
    if (la == lb) continue;
    double prev = -kInf;
    for (double tau : {-1.0, 0.0, 1.0}) {
      const double v = log_power_mean(la, lb, tau);
      EXPECT_GE(v, std::min(la, lb) - 1e-12);
      EXPECT_LE(v, std::max(la, lb) + 1e-12);
      EXPECT_GE(v, prev - 1e-12);
      prev = v;
    }
  }
}

TEST(EvalDeformed, Examples) {
  Matrix x = testutil::normal_features(7, 2, 5);
  for (double b : default_beta_grid()) {
    const Vector pi = eval_deformed_all({b, Vector::Zero(2)}, CovariateGrid(Vector::Ones(7), x, Vector::Zero(7)));
    for (Index i = 0; i < 7; ++i) EXPECT_NEAR(pi(i), 1.0 / 7.0, 1e-15);
  }
  Matrix x2(2, 1);
  x2 << 1, 0;
  const CovariateGrid g2(Vector::Ones(2), x2, Vector::Zero(2));
  const Vector pi = eval_deformed_all({1.0, vec({1.0})}, g2);
  EXPECT_NEAR(pi(0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(pi(1), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(eval_deformed({1.0, vec({1.0})}, g2, 1), 1.0 / 3.0, 1e-15);
}

TEST(EvalDeformed, ContinuityAtZeroAndNormalization) {
  const Matrix x = testutil::normal_features(50, 3, 9);
  const CovariateGrid g(Vector::Ones(50), x, Vector::Zero(50));
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Vector a = 0.5 * testutil::normal_features(3, 1, 100 + s).col(0);
    const Vector p0 = eval_deformed_all({0.0, a}, g);
    const Vector p1 = eval_deformed_all({1e-8, a}, g);
    EXPECT_LT((p0 - p1).cwiseAbs().maxCoeff(), 1e-6);
    for (double b : default_beta_grid()) {
      try {
        EXPECT_NEAR(eval_deformed_all({b, a}, g).sum(), 1.0, 1e-10);
      } catch (const DomainError&) {
        // positivity violated for this alpha; covered below
      }
    }
  }
}

TEST(EvalDeformed, PositivityViolationListsCells) {
  Matrix x(3, 1);
  x << -2, 0, 1;
  const CovariateGrid g(Vector::Ones(3), x, Vector::Zero(3));
  try {
    eval_deformed_all({1.0, vec({1.0})}, g);
    FAIL();
  } catch (const DomainError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("1 cell"), std::string::npos) << msg;
    EXPECT_NE(msg.find(" 0"), std::string::npos) << msg;
  }
}

TEST(CumulativeIntensity, Examples) {
  const CovariateGrid g(Vector::Constant(10, 10.0), testutil::normal_features(10, 1, 2), Vector::Zero(10));
  EXPECT_NEAR(cumulative_intensity({std::log(2.0), vec({0.0})}, g), 200.0, 1e-12);
  EXPECT_LT(cumulative_intensity({-50.0, vec({0.0})}, g), 1e-15);
  Vector w(3);
  w << 1, 2, 3;
  const CovariateGrid g3(w, testutil::normal_features(3, 1, 2), Vector::Zero(3));
  EXPECT_NEAR(cumulative_intensity({0.0, vec({0.0})}, g3), 6.0, 1e-14);
}

TEST(ModelGradients, Examples) {
  const Vector g = model_gradients(LogLinearParams{0.3, vec({1.0, 2.0})}, make_cell({3.0, -2.0}));
  EXPECT_EQ(g, vec({1.0, 3.0, -2.0}));
  // theta'x = alpha'z => omega = 1/2 for every tau
  for (double tau : {-1.0, 0.0, 0.5, 1.0}) {
    const QuasiLinearParams p{tau, vec({0.2, 1.0}), vec({0.7, 0.5})};
    const Vector q = model_gradients(p, make_cell({1.0}, {1.0}));
    EXPECT_NEAR(q(0), 0.5, 1e-15);
    EXPECT_NEAR(q(1), 0.5, 1e-15);
    EXPECT_NEAR(q(2), 0.5, 1e-15);
    EXPECT_NEAR(q(3), 0.5, 1e-15);
  }
}

TEST(ModelGradients, MatchFiniteDifferences) {
  sdm::CounterRng rng(3);
  for (int k = 0; k < 40; ++k) {
    const Cell c = make_cell({rng.uniform() * 2 - 1, rng.uniform() * 2 - 1}, {rng.uniform() * 2 - 1});
    const Vector th = testutil::normal_features(3, 1, 200 + k).col(0) * 0.5;
    const auto loglin = [&](const Vector& t) {
      return std::log(eval_loglinear({t(0), t.tail(2)}, c));
    };
    EXPECT_LT(testutil::rel_err(model_gradients(LogLinearParams{th(0), th.tail(2)}, c), testutil::fd_gradient(loglin, th)),
              1e-5);
    for (double tau : {-1.0, 0.0, 1.0, 0.3}) {
      const Vector pv = testutil::normal_features(5, 1, 300 + k).col(0) * 0.5;
      const auto ql = [&](const Vector& t) {
        return std::log(eval_quasilinear(QuasiLinearParams::unpack(tau, t, 3), c));
      };
      EXPECT_LT(testutil::rel_err(model_gradients(QuasiLinearParams::unpack(tau, pv, 3), c),
                                  testutil::fd_gradient(ql, pv)),
                1e-5)
          << "tau=" << tau;
    }
  }
}

TEST(QuasiLinearFamily, JacobianMatchesCellGradients) {
  Matrix x = testutil::normal_features(6, 2, 1), z = testutil::normal_features(6, 1, 2);
  const CovariateGrid g(Vector::Ones(6), x, Vector::Zero(6), 0.0, z);
  const QuasiLinearFamily fam(g, -1.0);
  const Vector pv = testutil::normal_features(5, 1, 4).col(0);
  const Matrix j = fam.jacobian(pv);
  const Vector eta = fam.log_intensity(pv);
  for (Index i = 0; i < 6; ++i) {
    const auto p = QuasiLinearParams::unpack(-1.0, pv, 3);
    EXPECT_LT((j.row(i).transpose() - model_gradients(p, g.cell(i))).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_NEAR(std::exp(eta(i)), eval_quasilinear(p, g.cell(i)), 1e-12 * std::exp(eta(i)));
  }
  EXPECT_EQ(fam.param_names().size(), 5u);
}
