#pragma once

#include "sdm/core.hpp"
#include "sdm/grid.hpp"
#include "sdm/models.hpp"
#include "sdm/optimize.hpp"

#include <boost/math/special_functions/expint.hpp>

#include <string>
#include <vector>

namespace sdm {

// ---------------------------------------------------------------------------
// Cdf weights for the U-divergence family.

enum class CdfFamily { Step, Exponential, UniformCap };

struct CdfSpec {
  CdfFamily family = CdfFamily::Step;

  // F(u) for u >= 0
  double operator()(double u) const {
    switch (family) {
      case CdfFamily::Step: return u > 0 ? 1.0 : 0.0;
      case CdfFamily::Exponential: return -std::expm1(-u);
      case CdfFamily::UniformCap: return u < 1.0 ? std::max(u, 0.0) : 1.0;
    }
    return kNaN;
  }

  // F'(u); the Step jump at 0 is ignored since intensities are positive.
  double density(double u) const {
    switch (family) {
      case CdfFamily::Step: return 0.0;
      case CdfFamily::Exponential: return std::exp(-u);
      case CdfFamily::UniformCap: return (u >= 0 && u < 1.0) ? 1.0 : 0.0;
    }
    return kNaN;
  }
};

inline std::string to_string(CdfFamily f) {
  switch (f) {
    case CdfFamily::Step: return "step";
    case CdfFamily::Exponential: return "exp";
    case CdfFamily::UniformCap: return "unicap";
  }
  return "?";
}

inline CdfFamily parse_cdf_family(const std::string& s) {
  if (s == "step") return CdfFamily::Step;
  if (s == "exp" || s == "exponential") return CdfFamily::Exponential;
  if (s == "unicap" || s == "uniformcap") return CdfFamily::UniformCap;
  throw ConfigError("unknown cdf family '" + s + "' (expected step, exp or unicap)");
}

namespace detail {

// Ein(x) = integral_0^x (1 - e^{-t}) / t dt
inline double entire_exponential_integral(double x) {
  if (x <= 0) return 0.0;
  if (x < 1.0) {
    double term = x, sum = x;
    for (int k = 2; k < 40; ++k) {
      term *= -x / k;
      const double add = term / k;
      sum += add;
      if (std::abs(add) < 1e-18 * std::abs(sum)) break;
    }
    return sum;
  }
  constexpr double kEulerGamma = 0.57721566490153286061;
  return boost::math::expint(1, x) + kEulerGamma + std::log(x);
}

}  // namespace detail

// xi(lambda) = integral_0^lambda F(tau t) / t dt. For the Step cdf the integral
// diverges at 0 and log(lambda) is used (same derivative).
inline double u_generator(const CdfSpec& cdf, double lambda, double tau) {
  const double x = tau * lambda;
  switch (cdf.family) {
    case CdfFamily::Step: return std::log(lambda);
    case CdfFamily::Exponential: return detail::entire_exponential_integral(x);
    case CdfFamily::UniformCap: return x <= 1.0 ? x : 1.0 + std::log(x);
  }
  return kNaN;
}

// integral_0^lambda F(tau t) dt, i.e. U(xi(lambda)) up to a constant.
inline double u_mass(const CdfSpec& cdf, double lambda, double tau) {
  const double x = tau * lambda;
  switch (cdf.family) {
    case CdfFamily::Step: return lambda;
    case CdfFamily::Exponential: return lambda + std::expm1(-x) / tau;
    case CdfFamily::UniformCap: return x <= 1.0 ? 0.5 * tau * lambda * lambda : lambda - 0.5 / tau;
  }
  return kNaN;
}

// ---------------------------------------------------------------------------

enum class DivergenceKind { KL, BetaPower, GammaPower, UCdf };

struct DivergenceSpec {
  DivergenceKind kind = DivergenceKind::KL;
  double beta = 0.0;
  double gamma = 0.0;
  CdfSpec cdf{};
  double ucdf_tau = 1.0;

  static DivergenceSpec kl() { return {}; }
  static DivergenceSpec beta_power(double b) { return {DivergenceKind::BetaPower, b}; }
  static DivergenceSpec gamma_power(double g) { return {DivergenceKind::GammaPower, 0.0, g}; }
  static DivergenceSpec u_cdf(CdfFamily f, double tau) {
    return {DivergenceKind::UCdf, 0.0, 0.0, CdfSpec{f}, tau};
  }

  void validate() const {
    if (!std::isfinite(beta) || !std::isfinite(gamma)) {
      throw ConfigError("divergence exponents must be finite");
    }
    if (kind == DivergenceKind::UCdf && !(ucdf_tau > 0 && std::isfinite(ucdf_tau))) {
      throw ConfigError("cdf scale tau must be positive");
    }
    if (kind == DivergenceKind::GammaPower && gamma == -1.0) {
      throw ConfigError("gamma = -1 is not admissible");
    }
    if (kind == DivergenceKind::BetaPower && beta == -1.0) {
      throw ConfigError("beta = -1 is not admissible for the intensity loss");
    }
  }

  bool is_likelihood() const {
    return kind == DivergenceKind::KL || (kind == DivergenceKind::BetaPower && beta == 0.0) ||
           (kind == DivergenceKind::UCdf && cdf.family == CdfFamily::Step);
  }

  std::string name() const {
    switch (kind) {
      case DivergenceKind::KL: return "kl";
      case DivergenceKind::BetaPower: return "beta(" + std::to_string(beta) + ")";
      case DivergenceKind::GammaPower: return "gamma(" + std::to_string(gamma) + ")";
      case DivergenceKind::UCdf:
        return "ucdf(" + to_string(cdf.family) + "," + std::to_string(ucdf_tau) + ")";
    }
    return "?";
  }
};

struct FitResult {
  std::string method;
  Vector params;
  std::vector<std::string> param_names;
  double objective = kNaN;   // minimized loss
  double loglik = kNaN;      // log-likelihood at params, for likelihood fits
  double score_norm = kInf;  // sup-norm of the estimating function
  int iterations = 0;
  bool converged = false;
  bool ridge_stabilized = false;
  bool separation = false;
  std::string message;
  Index num_params = 0;  // free parameters counted by AIC
  Matrix bread;          // J: Jacobian of the negated estimating function
  Matrix meat;           // K: variance of the estimating function
  Matrix covariance;     // J^-1 K J^-T
  double aic = kNaN;
  double tic = kNaN;
};

struct FitOptions {
  NewtonOptions newton{};
  bool covariance = true;
  // Ridge added to slope coefficients when the design is rank deficient;
  // scaled by the total presence count.
  double ridge_fallback = 1e-6;
};

// ---------------------------------------------------------------------------
// Per-cell separable losses, written in terms of eta = log lambda.

namespace detail {

struct CellTerms {
  double loss = 0;
  double d1 = 0;      // d loss / d eta
  double d2 = 0;      // d^2 loss / d eta^2
  double weight = 1;  // multiplier of (c - w lambda) in the estimating function
};

inline CellTerms cell_terms(const DivergenceSpec& spec, double c, double w, double eta) {
  CellTerms t;
  const double lambda = std::exp(eta);
  const double resid = c - w * lambda;
  switch (spec.kind) {
    case DivergenceKind::KL:
      t.loss = (c > 0 ? -c * eta : 0.0) + w * lambda;
      t.weight = 1.0;
      t.d2 = w * lambda;
      break;
    case DivergenceKind::BetaPower: {
      const double b = spec.beta;
      if (b == 0.0) return cell_terms(DivergenceSpec::kl(), c, w, eta);
      const double lb = std::exp(b * eta);
      t.loss = -c * std::expm1(b * eta) / b + w * lb * lambda / (1.0 + b);
      t.weight = lb;
      t.d2 = -b * lb * resid + w * lb * lambda;
      break;
    }
    case DivergenceKind::UCdf: {
      const CdfSpec& F = spec.cdf;
      const double tau = spec.ucdf_tau;
      t.loss = (c > 0 ? -c * u_generator(F, lambda, tau) : 0.0) + w * u_mass(F, lambda, tau);
      t.weight = F(tau * lambda);
      t.d2 = -tau * lambda * F.density(tau * lambda) * resid + t.weight * w * lambda;
      break;
    }
    case DivergenceKind::GammaPower:
      throw ConfigError("gamma-power loss is not cell-separable");
  }
  t.d1 = -t.weight * resid;
  return t;
}

}  // namespace detail

// Loss, gradient and (for linear predictors) Hessian of a separable divergence
// for an arbitrary intensity family.
template <IntensityFamily F>
class SeparableObjective {
 public:
  SeparableObjective(const F& family, const CovariateGrid& grid, DivergenceSpec spec,
                     double ridge = 0.0)
      : family_(family), grid_(grid), spec_(spec), ridge_(ridge) {}

  double value(const Vector& theta) const {
    const Vector eta = family_.log_intensity(theta);
    const Vector& w = grid_.weights();
    const Vector& c = grid_.counts();
    double sum = 0;
    for (Index i = 0; i < eta.size(); ++i) {
      if (!(eta(i) < kMaxLogIntensity)) return kInf;
      sum += detail::cell_terms(spec_, c(i), w(i), eta(i)).loss;
    }
    return std::isfinite(sum) ? sum + penalty(theta) : kInf;
  }

  Vector gradient(const Vector& theta) const {
    const Vector eta = family_.log_intensity(theta);
    Vector d1(eta.size());
    for (Index i = 0; i < eta.size(); ++i) {
      d1(i) = detail::cell_terms(spec_, grid_.counts()(i), grid_.weights()(i), eta(i)).d1;
    }
    Vector g = family_.jacobian(theta).transpose() * d1;
    if (ridge_ > 0) g.tail(g.size() - 1) += ridge_ * theta.tail(theta.size() - 1);
    return g;
  }

  Matrix hessian(const Vector& theta) const
    requires F::kLinearPredictor
  {
    const Vector eta = family_.log_intensity(theta);
    Vector d2(eta.size());
    for (Index i = 0; i < eta.size(); ++i) {
      d2(i) = detail::cell_terms(spec_, grid_.counts()(i), grid_.weights()(i), eta(i)).d2;
    }
    const Matrix& x = family_.jacobian(theta);
    Matrix h = x.transpose() * d2.asDiagonal() * x;
    if (ridge_ > 0) h.diagonal().tail(h.rows() - 1).array() += ridge_;
    return h;
  }

  // Estimating function sum_i weight_i (c_i - w_i lambda_i) d log lambda_i.
  Vector estimating_function(const Vector& theta) const {
    const Vector eta = family_.log_intensity(theta);
    Vector a(eta.size());
    for (Index i = 0; i < eta.size(); ++i) {
      a(i) = -detail::cell_terms(spec_, grid_.counts()(i), grid_.weights()(i), eta(i)).d1;
    }
    return family_.jacobian(theta).transpose() * a;
  }

  // K = sum_i c_i a_i a_i' with a_i = dE/dc_i.
  Matrix meat(const Vector& theta) const {
    const Vector eta = family_.log_intensity(theta);
    const Matrix jac = family_.jacobian(theta);
    Matrix k = Matrix::Zero(jac.cols(), jac.cols());
    for (Index i = 0; i < eta.size(); ++i) {
      const double c = grid_.counts()(i);
      if (c <= 0) continue;
      const double wt = detail::cell_terms(spec_, c, grid_.weights()(i), eta(i)).weight;
      const Vector a = wt * jac.row(i).transpose();
      k.noalias() += c * a * a.transpose();
    }
    return k;
  }

  // Per-cell weight function multiplying the likelihood score.
  Vector cell_weights(const Vector& theta) const {
    const Vector eta = family_.log_intensity(theta);
    Vector out(eta.size());
    for (Index i = 0; i < eta.size(); ++i) {
      out(i) = detail::cell_terms(spec_, 1.0, grid_.weights()(i), eta(i)).weight;
    }
    return out;
  }

 private:
  double penalty(const Vector& theta) const {
    return ridge_ > 0 ? 0.5 * ridge_ * theta.tail(theta.size() - 1).squaredNorm() : 0.0;
  }

  const F& family_;
  const CovariateGrid& grid_;
  DivergenceSpec spec_;
  double ridge_;
};

// ---------------------------------------------------------------------------
// KL (negative log-likelihood) for the log-linear model.

inline double negloglik(const LogLinearParams& params, const CovariateGrid& grid) {
  LogLinearFamily fam(grid);
  return SeparableObjective(fam, grid, DivergenceSpec::kl()).value(params.packed());
}

inline Vector score_kl(const LogLinearParams& params, const CovariateGrid& grid) {
  LogLinearFamily fam(grid);
  return SeparableObjective(fam, grid, DivergenceSpec::kl()).estimating_function(params.packed());
}

template <IntensityFamily F>
double loglik(const F& family, const Vector& theta, const CovariateGrid& grid) {
  return -SeparableObjective(family, grid, DivergenceSpec::kl()).value(theta);
}

// ---------------------------------------------------------------------------
// Sandwich covariance.

// J^-1 K J^-T, symmetrized with negative eigenvalues floored at 0.
inline Matrix sandwich(const Matrix& bread, const Matrix& meat) {
  Eigen::FullPivLU<Matrix> lu(bread);
  if (!lu.isInvertible()) {
    throw DomainError("singular estimating-function Jacobian; refit with a ridge penalty");
  }
  const Matrix jinv = lu.inverse();
  Matrix cov = jinv * meat * jinv.transpose();
  cov = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  Vector ev = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// Bread = numerical Jacobian of the loss gradient (= -dE/dtheta).
template <IntensityFamily F>
Matrix numerical_bread(const SeparableObjective<F>& obj, const Vector& theta) {
  Matrix j = numerical_jacobian(
      [&](const Vector& t) -> Vector { return -obj.estimating_function(t); }, theta, 1e-5);
  return 0.5 * (j + j.transpose());
}

template <IntensityFamily F>
Matrix sandwich_covariance(const FitResult& fit, const CovariateGrid& grid, const F& family,
                           const DivergenceSpec& spec) {
  SeparableObjective obj(family, grid, spec);
  return sandwich(numerical_bread(obj, fit.params), obj.meat(fit.params));
}

// 2 tr(J^-1 K) + 2 * loss
inline double tic_value(const Matrix& bread, const Matrix& meat, double loss) {
  Eigen::FullPivLU<Matrix> lu(bread);
  if (!lu.isInvertible()) throw DomainError("singular Jacobian in TIC");
  return 2.0 * (lu.solve(meat)).trace() + 2.0 * loss;
}

// ---------------------------------------------------------------------------
// Fitting.

namespace detail {

template <IntensityFamily F>
bool design_rank_deficient(const F& family, const CovariateGrid& grid) {
  if constexpr (F::kLinearPredictor) {
    const Matrix xs = grid.weights().cwiseSqrt().asDiagonal() * family.design();
    Eigen::ColPivHouseholderQR<Matrix> qr(xs);
    qr.setThreshold(1e-10);
    return qr.rank() < family.dim();
  } else {
    return false;
  }
}

template <IntensityFamily F>
FitResult fit_separable(const CovariateGrid& grid, const F& family, const DivergenceSpec& spec,
                        const FitOptions& opts, const Vector* start = nullptr) {
  spec.validate();
  if (grid.total_presence() < 1) throw ValidationError("fit requires at least one presence");
  FitResult fit;
  fit.method = spec.name();
  fit.param_names = family.param_names();
  double ridge = 0.0;
  if (design_rank_deficient(family, grid)) {
    ridge = opts.ridge_fallback * grid.total_presence();
    fit.ridge_stabilized = true;
  }
  SeparableObjective obj(family, grid, spec, ridge);
  Vector x0 = start ? *start : Vector::Zero(family.dim());
  NewtonResult nr = minimize_newton(obj, x0, opts.newton);
  fit.params = nr.x;
  fit.objective = nr.value;
  fit.iterations = nr.iterations;
  fit.converged = nr.converged;
  fit.ridge_stabilized = fit.ridge_stabilized || nr.ridged;
  fit.message = nr.message;
  fit.score_norm = sup_norm(obj.estimating_function(nr.x));
  fit.num_params = family.dim();
  if (spec.is_likelihood()) {
    fit.loglik = loglik(family, fit.params, grid);
  }
  if (opts.covariance && fit.converged && fit.params.allFinite()) {
    fit.bread = numerical_bread(obj, fit.params);
    fit.meat = obj.meat(fit.params);
    try {
      fit.covariance = sandwich(fit.bread, fit.meat);
      fit.tic = tic_value(fit.bread, fit.meat, fit.objective);
    } catch (const DomainError& e) {
      fit.message += std::string("; ") + e.what();
    }
  }
  if (spec.is_likelihood() && std::isfinite(fit.loglik)) {
    fit.aic = 2.0 * static_cast<double>(fit.num_params) - 2.0 * fit.loglik;
  }
  return fit;
}

}  // namespace detail

template <IntensityFamily F>
FitResult fit_mle(const CovariateGrid& grid, const F& family, const FitOptions& opts = {}) {
  return detail::fit_separable(grid, family, DivergenceSpec::kl(), opts);
}

inline FitResult fit_mle(const CovariateGrid& grid, const FitOptions& opts = {}) {
  return fit_mle(grid, LogLinearFamily(grid), opts);
}

template <IntensityFamily F>
FitResult fit_beta_power(const CovariateGrid& grid, const F& family, double beta,
                         const FitOptions& opts = {}) {
  if (beta == 0.0) return fit_mle(grid, family, opts);
  return detail::fit_separable(grid, family, DivergenceSpec::beta_power(beta), opts);
}

template <IntensityFamily F>
FitResult fit_u_cdf(const CovariateGrid& grid, const F& family, CdfSpec cdf, double ucdf_tau,
                    const FitOptions& opts = {}) {
  return detail::fit_separable(grid, family, DivergenceSpec::u_cdf(cdf.family, ucdf_tau), opts);
}

// ---------------------------------------------------------------------------
// gamma-power divergence for the log-linear model. The loss is invariant to
// the scale of lambda, so only the slopes are optimized; the intercept is then
// pinned so that the expected total count matches the observed one.

struct GammaWeights {
  Vector u;  // lambda^g / sum over presence points of lambda^g (per cell, one point)
  Vector v;  // lambda^(g+1) / sum_i w_i lambda_i^(g+1)
};

namespace detail {

inline double log_sum_exp(const Vector& a) {
  const double mx = a.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((a.array() - mx).exp().sum());
}

}  // namespace detail

inline GammaWeights gamma_weights(const LogLinearParams& params, const CovariateGrid& grid,
                                  double gamma) {
  const Vector eta = LogLinearFamily(grid).log_intensity(params.packed());
  const Vector& c = grid.counts();
  std::vector<double> pres;
  for (Index i = 0; i < eta.size(); ++i) {
    if (c(i) > 0) pres.push_back(std::log(c(i)) + gamma * eta(i));
  }
  if (pres.empty()) throw ValidationError("gamma weights require at least one presence");
  const double log_sn = detail::log_sum_exp(Eigen::Map<Vector>(pres.data(), static_cast<Index>(pres.size())));
  const double log_sm = detail::log_sum_exp(
      (grid.weights().array().log() + (gamma + 1.0) * eta.array()).matrix());
  GammaWeights gw;
  gw.u = (gamma * eta.array() - log_sn).exp();
  gw.v = ((gamma + 1.0) * eta.array() - log_sm).exp();
  return gw;
}

// The gamma-power loss in its direct form:
// -(1/g) sum_pres lambda^g / (sum_i w_i lambda_i^(g+1))^(g/(g+1)).
inline double gamma_power_loss(const LogLinearParams& params, const CovariateGrid& grid,
                               double gamma) {
  if (gamma == 0.0) throw ConfigError("gamma_power_loss requires gamma != 0");
  const Vector eta = LogLinearFamily(grid).log_intensity(params.packed());
  const Vector& c = grid.counts();
  double sn = 0;
  for (Index i = 0; i < eta.size(); ++i) {
    if (c(i) > 0) sn += c(i) * std::exp(gamma * eta(i));
  }
  const double sm = grid.weights().dot(((gamma + 1.0) * eta.array()).exp().matrix());
  return -sn / (gamma * std::pow(sm, gamma / (gamma + 1.0)));
}

// Monotone (log) transform of the gamma-power loss over the slopes; same
// minimizer, numerically stable as gamma -> 0 where it tends to the Maxent
// negative log-likelihood divided by n.
class GammaObjective {
 public:
  GammaObjective(const CovariateGrid& grid, double gamma)
      : x_(grid.habitat()), grid_(grid), gamma_(gamma) {
    for (Index i = 0; i < grid.size(); ++i) {
      if (grid.counts()(i) > 0) pres_.push_back(i);
    }
    n_ = grid.total_presence();
    log_w_ = grid.weights().array().log();
  }

  double value(const Vector& slopes) const {
    const Vector eta = x_ * slopes;
    const double log_sm = detail::log_sum_exp((log_w_.array() + (gamma_ + 1.0) * eta.array()).matrix());
    double first;
    if (gamma_ == 0.0) {
      double s = 0;
      for (Index i : pres_) s += grid_.counts()(i) * eta(i);
      first = -s / n_;
    } else {
      Vector a(static_cast<Index>(pres_.size()));
      for (std::size_t k = 0; k < pres_.size(); ++k) {
        const Index i = pres_[k];
        a(static_cast<Index>(k)) = std::log(grid_.counts()(i)) + gamma_ * eta(i);
      }
      first = -(detail::log_sum_exp(a) - std::log(n_)) / gamma_;
    }
    const double out = first + log_sm / (gamma_ + 1.0);
    return std::isfinite(out) ? out : kInf;
  }

  // Estimating function sum_i w_i (zeta_i u_i - v_i) x_i (slope block).
  Vector estimating_function(const Vector& slopes) const {
    const auto gw = weights(slopes);
    Vector coef = grid_.counts().cwiseProduct(gw.u) - grid_.weights().cwiseProduct(gw.v);
    return x_.transpose() * coef;
  }

  Vector gradient(const Vector& slopes) const { return -estimating_function(slopes); }

  // K with a_i = dE/dc_i = u_i (x_i - xbar_u)
  Matrix meat(const Vector& slopes) const {
    const auto gw = weights(slopes);
    Vector xbar = x_.transpose() * grid_.counts().cwiseProduct(gw.u);
    Matrix k = Matrix::Zero(x_.cols(), x_.cols());
    for (Index i : pres_) {
      const Vector a = gw.u(i) * (x_.row(i).transpose() - xbar);
      k.noalias() += grid_.counts()(i) * a * a.transpose();
    }
    return k;
  }

  GammaWeights weights(const Vector& slopes) const {
    LogLinearParams p{0.0, slopes};
    return gamma_weights(p, grid_, gamma_);
  }

 private:
  Matrix x_;
  const CovariateGrid& grid_;
  double gamma_;
  std::vector<Index> pres_;
  double n_ = 0;
  Vector log_w_;
};

inline FitResult fit_gamma_power(const CovariateGrid& grid, double gamma,
                                 const FitOptions& opts = {}) {
  DivergenceSpec::gamma_power(gamma).validate();
  if (grid.total_presence() < 1) throw ValidationError("fit requires at least one presence");
  const Index p = grid.p();
  GammaObjective obj(grid, gamma);
  NewtonResult nr = minimize_newton(obj, Vector::Zero(p), opts.newton);

  FitResult fit;
  fit.method = DivergenceSpec::gamma_power(gamma).name();
  fit.param_names = LogLinearFamily(grid).param_names();
  fit.iterations = nr.iterations;
  fit.converged = nr.converged;
  fit.ridge_stabilized = nr.ridged;
  fit.message = nr.message;
  fit.objective = nr.value;
  fit.score_norm = sup_norm(obj.estimating_function(nr.x));
  fit.num_params = p + 1;

  const Vector eta = grid.habitat() * nr.x;
  const double log_lambda_sum =
      detail::log_sum_exp((grid.weights().array().log() + eta.array()).matrix());
  const double theta0 = std::log(grid.total_presence()) - log_lambda_sum;
  fit.params.resize(p + 1);
  fit.params << theta0, nr.x;

  if (opts.covariance && fit.converged && p > 0) {
    Matrix j = numerical_jacobian(
        [&](const Vector& s) -> Vector { return -obj.estimating_function(s); }, nr.x, 1e-5);
    j = 0.5 * (j + j.transpose());
    const Matrix k = obj.meat(nr.x);
    try {
      const Matrix slope_cov = sandwich(j, k);
      // Delta method for the pinned intercept: theta0 = log n - log sum w e^eta,
      // with Var(log n) = 1/n and d theta0 / d slopes = -(lambda-weighted mean of x).
      const Vector lam = (grid.weights().array().log() + eta.array() - log_lambda_sum).exp();
      const Vector xbar = grid.habitat().transpose() * lam;
      Matrix cov(p + 1, p + 1);
      cov(0, 0) = 1.0 / grid.total_presence() + xbar.dot(slope_cov * xbar);
      cov.block(1, 0, p, 1) = -slope_cov * xbar;
      cov.block(0, 1, 1, p) = cov.block(1, 0, p, 1).transpose();
      cov.block(1, 1, p, p) = slope_cov;
      fit.covariance = cov;
      fit.bread = j;
      fit.meat = k;
      fit.tic = tic_value(j, k, fit.objective);
    } catch (const DomainError& e) {
      fit.message += std::string("; ") + e.what();
    }
  }
  return fit;
}

// Dispatches on the divergence kind for the log-linear family.
inline FitResult fit_divergence(const CovariateGrid& grid, const DivergenceSpec& spec,
                                const FitOptions& opts = {}) {
  LogLinearFamily fam(grid);
  switch (spec.kind) {
    case DivergenceKind::KL: return fit_mle(grid, fam, opts);
    case DivergenceKind::BetaPower: return fit_beta_power(grid, fam, spec.beta, opts);
    case DivergenceKind::GammaPower: return fit_gamma_power(grid, spec.gamma, opts);
    case DivergenceKind::UCdf: return fit_u_cdf(grid, fam, spec.cdf, spec.ucdf_tau, opts);
  }
  throw ConfigError("unknown divergence kind");
}

// Estimating function at arbitrary parameters (log-linear family).
inline Vector estimating_function(const CovariateGrid& grid, const DivergenceSpec& spec,
                                  const LogLinearParams& params) {
  if (spec.kind == DivergenceKind::GammaPower) {
    GammaObjective obj(grid, spec.gamma);
    Vector slopes = obj.estimating_function(params.theta1);
    Vector out(slopes.size() + 1);
    out << 0.0, slopes;  // intercept component vanishes identically
    return out;
  }
  LogLinearFamily fam(grid);
  return SeparableObjective(fam, grid, spec).estimating_function(params.packed());
}

}  // namespace sdm
