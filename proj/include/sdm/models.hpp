#pragma once

#include "sdm/core.hpp"
#include "sdm/grid.hpp"

#include <concepts>
#include <sstream>
#include <string>
#include <vector>

namespace sdm {

// exp() overflows past this exponent.
inline constexpr double kMaxLogIntensity = 709.0;

struct LogLinearParams {
  double theta0 = 0.0;
  Vector theta1;

  Vector packed() const {
    Vector v(1 + theta1.size());
    v << theta0, theta1;
    return v;
  }
  static LogLinearParams unpack(const Vector& v) { return {v(0), v.tail(v.size() - 1)}; }
};

// Kolmogorov-Nagumo power mean of a habitat intensity and a sampling-bias
// intensity. tau = 0 is the geometric-mean (thinned) limit.
struct QuasiLinearParams {
  double tau = 0.0;
  Vector theta;       // intercept followed by habitat slopes
  Vector alpha_bias;  // intercept followed by bias slopes

  Vector packed() const {
    Vector v(theta.size() + alpha_bias.size());
    v << theta, alpha_bias;
    return v;
  }
  static QuasiLinearParams unpack(double tau, const Vector& v, Index habitat_dim) {
    return {tau, v.head(habitat_dim), v.tail(v.size() - habitat_dim)};
  }
};

// Deformed-exponential (beta-Maxent) probability model over grid cells.
struct DeformedParams {
  double beta_ent = 0.0;
  Vector alpha1;
};

inline const std::vector<double>& default_beta_grid() {
  static const std::vector<double> g{-1.0, -1.0 / 3.0, -0.2, 0.0, 0.2, 1.0 / 3.0, 1.0};
  return g;
}

namespace detail {

inline void check_dims(Index expected, Index got, const char* what) {
  if (expected != got) {
    std::ostringstream os;
    os << what << ": dimension mismatch (expected " << expected << ", got " << got << ")";
    throw DomainError(os.str());
  }
}

inline double checked_exp(double eta, long long cell_id) {
  if (!(eta <= kMaxLogIntensity) || !std::isfinite(eta)) {
    std::ostringstream os;
    os << "intensity overflow at cell " << cell_id << " (log-intensity " << eta << ")";
    throw DomainError(os.str());
  }
  return std::exp(eta);
}

}  // namespace detail

inline double eval_loglinear(const LogLinearParams& params, const Cell& cell) {
  detail::check_dims(params.theta1.size(), cell.x.size(), "eval_loglinear");
  return detail::checked_exp(params.theta0 + params.theta1.dot(cell.x), cell.id);
}

// log of the power mean M_tau(exp(a), exp(b)).
inline double log_power_mean(double log_a, double log_b, double tau) {
  static const double kLog2 = std::log(2.0);
  if (tau == 0.0) return 0.5 * (log_a + log_b);
  if (tau == 1.0) return log_add_exp(log_a, log_b) - kLog2;
  if (tau == -1.0) return kLog2 - log_add_exp(-log_a, -log_b);
  return (log_add_exp(tau * log_a, tau * log_b) - kLog2) / tau;
}

// d log M_tau / d log a; the complementary share goes to b.
inline double power_mean_share(double log_a, double log_b, double tau) {
  if (tau == 0.0) return 0.5;
  return logistic(tau * (log_a - log_b));
}

inline double eval_quasilinear(const QuasiLinearParams& params, const Cell& cell) {
  detail::check_dims(params.theta.size(), 1 + cell.x.size(), "eval_quasilinear (habitat)");
  detail::check_dims(params.alpha_bias.size(), 1 + cell.z.size(), "eval_quasilinear (bias)");
  const double a = params.theta(0) + params.theta.tail(cell.x.size()).dot(cell.x);
  const double b = params.alpha_bias(0) + params.alpha_bias.tail(cell.z.size()).dot(cell.z);
  const double out = log_power_mean(a, b, params.tau);
  if (!std::isfinite(out)) {
    std::ostringstream os;
    os << "quasi-linear intensity not finite at cell " << cell.id;
    throw DomainError(os.str());
  }
  return detail::checked_exp(out, cell.id);
}

// log pi_beta for every cell; throws DomainError listing cells where
// 1 + beta * alpha1'x <= 0.
inline Vector deformed_log_probabilities(const DeformedParams& params, const Matrix& x,
                                         const std::vector<long long>* ids = nullptr) {
  detail::check_dims(params.alpha1.size(), x.cols(), "eval_deformed");
  const Vector u = x * params.alpha1;
  const double beta = params.beta_ent;
  Vector logq(u.size());
  if (beta == 0.0) {
    logq = u;
  } else {
    std::vector<Index> bad;
    for (Index i = 0; i < u.size(); ++i) {
      const double t = 1.0 + beta * u(i);
      if (!(t > 0)) {
        bad.push_back(i);
        continue;
      }
      logq(i) = std::log(t) / beta;
    }
    if (!bad.empty()) {
      std::ostringstream os;
      os << "deformed model positivity violated (1 + beta*alpha'x <= 0) at " << bad.size()
         << " cell(s):";
      for (std::size_t k = 0; k < bad.size() && k < 20; ++k) {
        os << ' ' << (ids ? (*ids)[static_cast<std::size_t>(bad[k])] : bad[k]);
      }
      if (bad.size() > 20) os << " ...";
      throw DomainError(os.str());
    }
  }
  const double mx = logq.maxCoeff();
  const double log_z = mx + std::log((logq.array() - mx).exp().sum());
  return logq.array() - log_z;
}

inline Vector eval_deformed_all(const DeformedParams& params, const CovariateGrid& grid) {
  return deformed_log_probabilities(params, grid.habitat(), &grid.ids()).array().exp();
}

inline double eval_deformed(const DeformedParams& params, const CovariateGrid& grid,
                            Index cell_index) {
  return eval_deformed_all(params, grid)(cell_index);
}

// ---------------------------------------------------------------------------
// Model families used by the fitters. A family maps a packed parameter vector
// to per-cell log-intensities and their Jacobian (cells x params).

template <class F>
concept IntensityFamily = requires(const F& f, const Vector& theta) {
  { f.dim() } -> std::convertible_to<Index>;
  { f.log_intensity(theta) } -> std::convertible_to<Vector>;
  { f.jacobian(theta) } -> std::convertible_to<Matrix>;
  { f.param_names() } -> std::convertible_to<std::vector<std::string>>;
};

inline Matrix with_intercept(const Matrix& x) {
  Matrix d(x.rows(), x.cols() + 1);
  d.col(0).setOnes();
  d.rightCols(x.cols()) = x;
  return d;
}

// log lambda = theta0 + theta1'x
class LogLinearFamily {
 public:
  static constexpr bool kLinearPredictor = true;

  explicit LogLinearFamily(const CovariateGrid& grid) : LogLinearFamily(grid.habitat(), grid.names().x) {}
  LogLinearFamily(const Matrix& x, std::vector<std::string> names = {})
      : design_(with_intercept(x)), names_(std::move(names)) {}

  Index dim() const { return design_.cols(); }
  Vector log_intensity(const Vector& theta) const { return design_ * theta; }
  const Matrix& jacobian(const Vector&) const { return design_; }
  const Matrix& design() const { return design_; }

  std::vector<std::string> param_names() const {
    std::vector<std::string> out{"theta0"};
    for (Index j = 1; j < dim(); ++j) {
      const auto k = static_cast<std::size_t>(j - 1);
      out.push_back(k < names_.size() ? names_[k] : "x" + std::to_string(j));
    }
    return out;
  }

 private:
  Matrix design_;
  std::vector<std::string> names_;
};

// log lambda_tau = log M_tau(exp(theta'[1,x]), exp(alpha'[1,z]))
class QuasiLinearFamily {
 public:
  static constexpr bool kLinearPredictor = false;

  QuasiLinearFamily(const CovariateGrid& grid, double tau)
      : habitat_(with_intercept(grid.habitat())),
        bias_(with_intercept(grid.bias())),
        tau_(tau),
        xnames_(grid.names().x),
        znames_(grid.names().z) {}

  Index dim() const { return habitat_.cols() + bias_.cols(); }
  Index habitat_dim() const { return habitat_.cols(); }
  double tau() const { return tau_; }

  Vector habitat_log_intensity(const Vector& params) const {
    return habitat_ * params.head(habitat_.cols());
  }
  Vector bias_log_intensity(const Vector& params) const {
    return bias_ * params.tail(bias_.cols());
  }

  Vector log_intensity(const Vector& params) const {
    const Vector a = habitat_log_intensity(params);
    const Vector b = bias_log_intensity(params);
    Vector out(a.size());
    for (Index i = 0; i < a.size(); ++i) out(i) = log_power_mean(a(i), b(i), tau_);
    return out;
  }

  // Share omega(s) of the habitat component in d log lambda_tau.
  Vector habitat_share(const Vector& params) const {
    const Vector a = habitat_log_intensity(params);
    const Vector b = bias_log_intensity(params);
    Vector out(a.size());
    for (Index i = 0; i < a.size(); ++i) out(i) = power_mean_share(a(i), b(i), tau_);
    return out;
  }

  Matrix jacobian(const Vector& params) const {
    const Vector omega = habitat_share(params);
    Matrix j(habitat_.rows(), dim());
    j.leftCols(habitat_.cols()) = omega.asDiagonal() * habitat_;
    j.rightCols(bias_.cols()) = (1.0 - omega.array()).matrix().asDiagonal() * bias_;
    return j;
  }

  std::vector<std::string> param_names() const {
    std::vector<std::string> out{"theta0"};
    for (std::size_t k = 0; k < xnames_.size(); ++k) out.push_back(xnames_[k]);
    for (Index k = static_cast<Index>(xnames_.size()) + 1; k < habitat_.cols(); ++k) {
      out.push_back("x" + std::to_string(k));
    }
    out.push_back("alpha0");
    for (std::size_t k = 0; k < znames_.size(); ++k) out.push_back(znames_[k]);
    for (Index k = static_cast<Index>(znames_.size()) + 1; k < bias_.cols(); ++k) {
      out.push_back("z" + std::to_string(k));
    }
    return out;
  }

 private:
  Matrix habitat_;
  Matrix bias_;
  double tau_;
  std::vector<std::string> xnames_, znames_;
};

template <IntensityFamily F>
double cumulative_intensity(const F& family, const Vector& params, const CovariateGrid& grid) {
  const Vector eta = family.log_intensity(params);
  return grid.weights().dot(eta.array().exp().matrix());
}

inline double cumulative_intensity(const LogLinearParams& params, const CovariateGrid& grid) {
  return cumulative_intensity(LogLinearFamily(grid), params.packed(), grid);
}

// d log lambda / d params at one cell.
inline Vector model_gradients(const LogLinearParams& params, const Cell& cell) {
  detail::check_dims(params.theta1.size(), cell.x.size(), "model_gradients");
  Vector g(1 + cell.x.size());
  g << 1.0, cell.x;
  return g;
}

inline Vector model_gradients(const QuasiLinearParams& params, const Cell& cell) {
  detail::check_dims(params.theta.size(), 1 + cell.x.size(), "model_gradients (habitat)");
  detail::check_dims(params.alpha_bias.size(), 1 + cell.z.size(), "model_gradients (bias)");
  const double a = params.theta(0) + params.theta.tail(cell.x.size()).dot(cell.x);
  const double b = params.alpha_bias(0) + params.alpha_bias.tail(cell.z.size()).dot(cell.z);
  const double omega = power_mean_share(a, b, params.tau);
  Vector g(params.theta.size() + params.alpha_bias.size());
  g(0) = omega;
  g.segment(1, cell.x.size()) = omega * cell.x;
  g(params.theta.size()) = 1.0 - omega;
  g.tail(cell.z.size()) = (1.0 - omega) * cell.z;
  return g;
}

}  // namespace sdm
