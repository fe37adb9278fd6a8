#pragma once

#include "sdm/core.hpp"
#include "sdm/divergence.hpp"
#include "sdm/grid.hpp"
#include "sdm/models.hpp"
#include "sdm/optimize.hpp"

#include <optional>
#include <string>
#include <vector>

namespace sdm {

// Relative curvature below which a fit is treated as diverging along a flat
// direction (complete or quasi-complete separation).
inline constexpr double kSeparationCurvature = 1e-5;

// ---------------------------------------------------------------------------
// Maxent

struct MaxentFit {
  Vector alpha1;
  double Z = kNaN;
  double log_z = kNaN;
  double theta0_equiv = kNaN;  // PPP intercept implied by the fit: log(m n / (|A| Z))
  double objective = kNaN;     // -sum_k log pi(s_k)
  double score_norm = kInf;
  int iterations = 0;
  bool converged = false;
  bool separation = false;
  std::string message;
};

// Negative Maxent log-likelihood -sum_k c_k log pi(s_k) over the slopes.
class MaxentObjective {
 public:
  explicit MaxentObjective(const CovariateGrid& grid)
      : x_(grid.habitat()), c_(grid.counts()), n_(grid.total_presence()) {
    xbar_ = x_.transpose() * c_;
  }

  double value(const Vector& a) const {
    const Vector u = x_ * a;
    const double out = -c_.dot(u) + n_ * log_z(u);
    return std::isfinite(out) ? out : kInf;
  }

  Vector gradient(const Vector& a) const {
    return -xbar_ + n_ * (x_.transpose() * probabilities(a));
  }

  Matrix hessian(const Vector& a) const {
    const Vector pi = probabilities(a);
    const Vector mean = x_.transpose() * pi;
    return n_ * (x_.transpose() * pi.asDiagonal() * x_ - mean * mean.transpose());
  }

  Vector probabilities(const Vector& a) const {
    const Vector u = x_ * a;
    return (u.array() - log_z(u)).exp();
  }

  static double log_z(const Vector& u) {
    const double mx = u.maxCoeff();
    return mx + std::log((u.array() - mx).exp().sum());
  }

 private:
  Matrix x_;
  Vector c_;
  double n_;
  Vector xbar_;
};

inline MaxentFit fit_maxent(const CovariateGrid& grid, const FitOptions& opts = {}) {
  if (grid.total_presence() < 1) throw ValidationError("Maxent requires at least one presence");
  MaxentObjective obj(grid);
  NewtonResult nr = minimize_newton(obj, Vector::Zero(grid.p()), opts.newton);
  MaxentFit fit;
  fit.alpha1 = nr.x;
  fit.objective = nr.value;
  fit.iterations = nr.iterations;
  fit.score_norm = nr.grad_norm;
  fit.message = nr.message;
  const double n = grid.total_presence();
  fit.separation = !(nr.min_hessian_eig / n > kSeparationCurvature) && grid.p() > 0;
  fit.converged = nr.converged && !fit.separation;
  if (fit.separation) fit.message = "separation: presences lie on a face of the feature hull";
  fit.log_z = MaxentObjective::log_z(grid.habitat() * fit.alpha1);
  fit.Z = std::exp(fit.log_z);
  fit.theta0_equiv = std::log(static_cast<double>(grid.size()) * n / grid.area()) - fit.log_z;
  return fit;
}

// ---------------------------------------------------------------------------
// beta-Maxent (deformed exponential model)

// n * L_beta(alpha1) where
// L_beta = -(1/(n beta)) sum_k (pi_k^beta - 1) + 1/(1+beta) sum_i pi_i^(1+beta).
// The second term is shifted by its value at pi = 1 so beta = -1 has a limit.
class BetaMaxentObjective {
 public:
  BetaMaxentObjective(const CovariateGrid& grid, double beta)
      : x_(grid.habitat()), c_(grid.counts()), n_(grid.total_presence()), beta_(beta) {}

  // log pi, or nullopt outside the positivity domain.
  std::optional<Vector> log_pi(const Vector& a) const {
    const Vector u = x_ * a;
    Vector logq(u.size());
    if (beta_ == 0.0) {
      logq = u;
    } else {
      for (Index i = 0; i < u.size(); ++i) {
        const double t = 1.0 + beta_ * u(i);
        if (!(t > 0)) return std::nullopt;
        logq(i) = std::log(t) / beta_;
      }
    }
    return (logq.array() - MaxentObjective::log_z(logq)).matrix();
  }

  double value(const Vector& a) const {
    const auto lp = log_pi(a);
    if (!lp) return kInf;
    double first = 0;
    for (Index i = 0; i < lp->size(); ++i) {
      if (c_(i) <= 0) continue;
      first += c_(i) * (beta_ == 0.0 ? -(*lp)(i) : -std::expm1(beta_ * (*lp)(i)) / beta_);
    }
    double second = 0;
    const double b1 = 1.0 + beta_;
    for (Index i = 0; i < lp->size(); ++i) {
      second += b1 == 0.0 ? (*lp)(i) : std::expm1(b1 * (*lp)(i)) / b1;
    }
    const double out = first + n_ * second;
    return std::isfinite(out) ? out : kInf;
  }

  // d log pi_i / d alpha as rows.
  Matrix dlog_pi(const Vector& a, const Vector& lp) const {
    const Vector u = x_ * a;
    const Vector t = (1.0 + beta_ * u.array()).matrix();
    Matrix g = t.cwiseInverse().asDiagonal() * x_;
    const Vector pi = lp.array().exp();
    const Vector mbar = g.transpose() * pi;
    g.rowwise() -= mbar.transpose();
    return g;
  }

  Vector gradient(const Vector& a) const {
    const auto lp = log_pi(a);
    if (!lp) return Vector::Constant(a.size(), kNaN);
    const Matrix g = dlog_pi(a, *lp);
    const Vector pb = (beta_ * lp->array()).exp();
    const Vector pb1 = ((1.0 + beta_) * lp->array()).exp();
    return -(g.transpose() * c_.cwiseProduct(pb)) + n_ * (g.transpose() * pb1);
  }

  // Per-presence-cell gradient of rho_k (one point), as rows.
  Matrix point_gradients(const Vector& a) const {
    const auto lp = log_pi(a);
    const Matrix g = dlog_pi(a, *lp);
    const Vector pb = (beta_ * lp->array()).exp();
    const Vector pb1 = ((1.0 + beta_) * lp->array()).exp();
    const Vector common = g.transpose() * pb1;
    Matrix out = -(pb.asDiagonal() * g);
    out.rowwise() += common.transpose();
    return out;
  }

  double beta() const { return beta_; }

 private:
  Matrix x_;
  Vector c_;
  double n_;
  double beta_;
};

struct BetaMaxentEntry {
  double beta = 0.0;
  Vector alpha1;
  double loss = kNaN;     // L_beta at the fit
  double loglik = kNaN;   // sum_k c_k log pi_beta(s_k)
  double tic = kNaN;
  bool converged = false;
  std::string message;
};

struct BetaMaxentFit {
  DeformedParams best;
  std::size_t best_index = 0;
  std::vector<BetaMaxentEntry> table;
};

// Information criterion of a beta-Maxent fit: the fitted deformed distribution
// is scored by its presence log-likelihood with the M-estimator bias correction
// 2 tr(J^-1 Q), J = Hessian of n L_beta, Q = sum_k psi_k (d log pi_k)'.
inline double beta_maxent_tic(const CovariateGrid& grid, double beta, const Vector& alpha1,
                              double* loglik_out = nullptr) {
  BetaMaxentObjective obj(grid, beta);
  const auto lp = obj.log_pi(alpha1);
  if (!lp) throw DomainError("beta-Maxent fit outside the positivity domain");
  const Vector& c = grid.counts();
  const double ll = c.dot(*lp);
  if (loglik_out) *loglik_out = ll;
  Matrix j = numerical_jacobian([&](const Vector& a) -> Vector { return obj.gradient(a); },
                                alpha1, 1e-5);
  j = 0.5 * (j + j.transpose());
  const Matrix psi = -obj.point_gradients(alpha1);
  const Matrix score = obj.dlog_pi(alpha1, *lp);
  Matrix q = Matrix::Zero(alpha1.size(), alpha1.size());
  for (Index i = 0; i < c.size(); ++i) {
    if (c(i) > 0) q.noalias() += c(i) * psi.row(i).transpose() * score.row(i);
  }
  Eigen::FullPivLU<Matrix> lu(j);
  if (!lu.isInvertible()) throw DomainError("singular Jacobian in beta-Maxent TIC");
  return -2.0 * ll + 2.0 * lu.solve(q).trace();
}

inline double beta_maxent_loss(const CovariateGrid& grid, double beta, const Vector& alpha1) {
  BetaMaxentObjective obj(grid, beta);
  const auto lp = obj.log_pi(alpha1);
  if (!lp) return kInf;
  const double n = grid.total_presence();
  if (beta == 0.0) return -grid.counts().dot(*lp) / n + 1.0;
  double first = 0, second = 0;
  for (Index i = 0; i < lp->size(); ++i) {
    if (grid.counts()(i) > 0) first += grid.counts()(i) * std::expm1(beta * (*lp)(i));
    second += beta == -1.0 ? (*lp)(i) : std::exp((1.0 + beta) * (*lp)(i));
  }
  return -first / (n * beta) + (beta == -1.0 ? second : second / (1.0 + beta));
}

inline BetaMaxentEntry fit_beta_maxent_single(const CovariateGrid& grid, double beta,
                                              const FitOptions& opts = {}) {
  BetaMaxentEntry e;
  e.beta = beta;
  if (beta == 0.0) {
    const MaxentFit mf = fit_maxent(grid, opts);
    e.alpha1 = mf.alpha1;
    e.converged = mf.converged;
    e.message = mf.message;
  } else {
    BetaMaxentObjective obj(grid, beta);
    NewtonResult nr = minimize_newton(obj, Vector::Zero(grid.p()), opts.newton);
    e.alpha1 = nr.x;
    e.converged = nr.converged;
    e.message = nr.message;
    if (!(nr.min_hessian_eig / grid.total_presence() > kSeparationCurvature) && grid.p() > 0) {
      e.converged = false;
      e.message = "flat direction at the fit (separation or boundary)";
    }
  }
  e.loss = beta_maxent_loss(grid, beta, e.alpha1);
  if (e.converged) {
    try {
      e.tic = beta_maxent_tic(grid, beta, e.alpha1, &e.loglik);
    } catch (const DomainError& err) {
      e.converged = false;
      e.message = err.what();
    }
  }
  return e;
}

inline BetaMaxentFit fit_beta_maxent(const CovariateGrid& grid,
                                     const std::vector<double>& beta_grid = default_beta_grid(),
                                     const FitOptions& opts = {}) {
  if (beta_grid.empty()) throw ConfigError("empty beta grid");
  BetaMaxentFit out;
  double best_tic = kInf;
  for (double b : beta_grid) {
    out.table.push_back(fit_beta_maxent_single(grid, b, opts));
    const auto& e = out.table.back();
    if (e.converged && e.tic < best_tic) {
      best_tic = e.tic;
      out.best_index = out.table.size() - 1;
    }
  }
  if (!std::isfinite(best_tic)) throw DomainError("no beta in the grid produced a converged fit");
  out.best = {out.table[out.best_index].beta, out.table[out.best_index].alpha1};
  return out;
}

// ---------------------------------------------------------------------------
// Weighted / infinitely weighted / asymmetric logistic regression

enum class WeightKind { CaseControl, Infinite, Asymmetric };

struct WeightScheme {
  WeightKind kind = WeightKind::Infinite;
  double mu = 0.5;                   // population prevalence
  double ybar = 0.5;                 // sample prevalence
  double background_weight = 1000.0; // W
  double kappa = 1.0;

  static WeightScheme case_control(double mu, double ybar) {
    return {WeightKind::CaseControl, mu, ybar};
  }
  static WeightScheme infinite(double w = 1000.0) {
    WeightScheme s;
    s.kind = WeightKind::Infinite;
    s.background_weight = w;
    return s;
  }
  static WeightScheme asymmetric(double kappa) {
    WeightScheme s;
    s.kind = WeightKind::Asymmetric;
    s.kappa = kappa;
    return s;
  }

  void validate() const {
    switch (kind) {
      case WeightKind::CaseControl:
        if (!(mu > 0 && mu < 1 && ybar > 0 && ybar < 1)) {
          throw ConfigError("case-control weights need 0 < mu < 1 and 0 < ybar < 1");
        }
        break;
      case WeightKind::Infinite:
        if (!(background_weight > 0)) throw ConfigError("background weight must be positive");
        break;
      case WeightKind::Asymmetric:
        if (!(kappa > 0)) throw ConfigError("kappa must be positive");
        break;
    }
  }
};

// omega(s) = e^eta / (e^eta + kappa)
inline double asymmetric_weight(double eta, double kappa) {
  return logistic(eta - std::log(kappa));
}

// Presence cells enter as y = 1 with multiplicity equal to their count. Cells
// without presences are background (y = 0). Under infinite weighting every
// cell is also a background row, so the weighted background sum is the
// quadrature of the intensity over the whole area.
class LogisticObjective {
 public:
  LogisticObjective(const CovariateGrid& grid, WeightScheme scheme) : scheme_(scheme) {
    const Index m = grid.size();
    const Matrix x = with_intercept(grid.habitat());
    std::vector<Index> cell;
    std::vector<double> y, rw, copies;
    const auto add = [&](Index i, double yi, double w, double k) {
      cell.push_back(i);
      y.push_back(yi);
      rw.push_back(w);
      copies.push_back(k);
    };
    for (Index i = 0; i < m; ++i) {
      const double c = grid.counts()(i);
      switch (scheme.kind) {
        case WeightKind::CaseControl:
          if (c > 0) {
            add(i, 1.0, scheme.mu / scheme.ybar, c);
          } else {
            add(i, 0.0, (1.0 - scheme.mu) / (1.0 - scheme.ybar), 1.0);
          }
          break;
        case WeightKind::Infinite:
          if (c > 0) add(i, 1.0, 1.0, c);
          add(i, 0.0, scheme.background_weight, 1.0);
          break;
        case WeightKind::Asymmetric: add(i, c > 0 ? 1.0 : 0.0, 1.0, c > 0 ? c : 1.0); break;
      }
    }
    const auto rows = static_cast<Index>(cell.size());
    design_.resize(rows, x.cols());
    for (Index r = 0; r < rows; ++r) design_.row(r) = x.row(cell[static_cast<std::size_t>(r)]);
    y_ = Vector::Map(y.data(), rows);
    row_weight_ = Vector::Map(rw.data(), rows);
    copies_ = Vector::Map(copies.data(), rows);
    mult_ = row_weight_.cwiseProduct(copies_);
  }

  double value(const Vector& b) const {
    const Vector eta = design_ * b;
    double s = 0;
    for (Index i = 0; i < eta.size(); ++i) {
      double ll;
      if (scheme_.kind == WeightKind::Asymmetric) {
        const double log_den = log_add_exp(std::log1p(scheme_.kappa), eta(i));
        ll = y_(i) > 0 ? log_add_exp(eta(i), std::log(scheme_.kappa)) - log_den : -log_den;
      } else {
        ll = y_(i) > 0 ? -log1pexp(-eta(i)) : -log1pexp(eta(i));
      }
      s -= mult_(i) * ll;
    }
    return std::isfinite(s) ? s : kInf;
  }

  // Per-row score factor: weight * (y - P), so that gradient = -X' (mult * r).
  double row_residual(double eta, double y) const {
    if (scheme_.kind == WeightKind::Asymmetric) {
      return asymmetric_weight(eta, scheme_.kappa) * (y - probability(eta));
    }
    return y - logistic(eta);
  }

  Vector gradient(const Vector& b) const {
    const Vector eta = design_ * b;
    Vector r(eta.size());
    for (Index i = 0; i < eta.size(); ++i) r(i) = mult_(i) * row_residual(eta(i), y_(i));
    return -(design_.transpose() * r);
  }

  double probability(double eta) const {
    if (scheme_.kind == WeightKind::Asymmetric) {
      // (e^eta + kappa) / (1 + e^eta + kappa)
      return 1.0 - 1.0 / (1.0 + scheme_.kappa + std::exp(std::min(eta, 700.0)));
    }
    return logistic(eta);
  }

  // Sum over individual rows (presence cells repeated `count` times) of the
  // outer product of the weighted row scores.
  Matrix meat(const Vector& b) const {
    const Vector eta = design_ * b;
    Vector s(eta.size());
    for (Index i = 0; i < eta.size(); ++i) {
      const double r = row_weight_(i) * row_residual(eta(i), y_(i));
      s(i) = copies_(i) * r * r;
    }
    return design_.transpose() * s.asDiagonal() * design_;
  }

  const Matrix& design() const { return design_; }
  const Vector& multiplicity() const { return mult_; }
  double presence_mass() const { return mult_.dot(y_); }

 private:
  WeightScheme scheme_;
  Matrix design_;
  Vector y_;
  Vector row_weight_;
  Vector copies_;
  Vector mult_;
};

inline FitResult fit_weighted_logistic(const CovariateGrid& grid, const WeightScheme& scheme,
                                       const FitOptions& opts = {}) {
  scheme.validate();
  LogisticObjective obj(grid, scheme);
  NewtonResult nr = minimize_newton(obj, Vector::Zero(1 + grid.p()), opts.newton);
  FitResult fit;
  switch (scheme.kind) {
    case WeightKind::CaseControl: fit.method = "cc-logit"; break;
    case WeightKind::Infinite: fit.method = "iwlr"; break;
    case WeightKind::Asymmetric: fit.method = "asym-logit"; break;
  }
  fit.param_names = LogLinearFamily(grid).param_names();
  fit.params = nr.x;
  fit.objective = nr.value;
  fit.iterations = nr.iterations;
  fit.score_norm = nr.grad_norm;
  fit.ridge_stabilized = nr.ridged;
  fit.message = nr.message;
  fit.num_params = 1 + grid.p();
  const double scale = std::max(1.0, obj.presence_mass());
  fit.separation = !(nr.min_hessian_eig / scale > kSeparationCurvature * 1e-3);
  fit.converged = nr.converged && !fit.separation;
  if (fit.separation) fit.message = "separation: fitted probabilities saturate";
  if (opts.covariance && fit.converged) {
    fit.bread = numerical_jacobian([&](const Vector& b) -> Vector { return obj.gradient(b); },
                                   fit.params, 1e-5);
    fit.bread = 0.5 * (fit.bread + fit.bread.transpose());
    fit.meat = obj.meat(fit.params);
    try {
      fit.covariance = sandwich(fit.bread, fit.meat);
      fit.tic = tic_value(fit.bread, fit.meat, fit.objective);
    } catch (const DomainError& e) {
      fit.message += std::string("; ") + e.what();
    }
  }
  if (scheme.kind == WeightKind::Asymmetric ||
      (scheme.kind == WeightKind::CaseControl && scheme.mu == scheme.ybar)) {
    fit.loglik = -fit.objective;
    fit.aic = 2.0 * static_cast<double>(fit.num_params) + 2.0 * fit.objective;
  }
  return fit;
}

// ---------------------------------------------------------------------------
// Quasi-linear Poisson point process

struct QuasiLinearEntry {
  double tau = 0.0;
  Vector params;
  double loglik = kNaN;
  double aic = kNaN;
  bool converged = false;
  std::string message;
};

struct QuasiLinearFit {
  QuasiLinearParams best;
  FitResult best_fit;
  std::size_t best_index = 0;
  std::vector<QuasiLinearEntry> table;
  Vector bias_proportion;  // 1 - omega(s_i) at the selected fit
};

inline QuasiLinearFit fit_quasilinear_ppp(const CovariateGrid& grid,
                                          const std::vector<double>& tau_grid = {-1.0, 0.0, 1.0},
                                          const FitOptions& opts = {}) {
  if (tau_grid.empty()) throw ConfigError("empty tau grid");
  QuasiLinearFit out;
  double best_aic = kInf;
  std::vector<FitResult> fits;
  for (double tau : tau_grid) {
    if (!std::isfinite(tau)) throw ConfigError("tau must be finite");
    QuasiLinearFamily fam(grid, tau);
    FitOptions o = opts;
    o.covariance = false;
    FitResult f = fit_mle(grid, fam, o);
    // At tau = 0 the two intercepts enter only through their sum.
    f.num_params = fam.dim() - (tau == 0.0 ? 1 : 0);
    f.aic = 2.0 * static_cast<double>(f.num_params) - 2.0 * f.loglik;
    f.method = "ql-ppp(" + std::to_string(tau) + ")";
    QuasiLinearEntry e{tau, f.params, f.loglik, f.aic, f.converged, f.message};
    out.table.push_back(e);
    if (f.converged && f.aic < best_aic) {
      best_aic = f.aic;
      out.best_index = out.table.size() - 1;
    }
    fits.push_back(std::move(f));
  }
  if (!std::isfinite(best_aic)) throw DomainError("no tau in the grid produced a converged fit");
  const double tau = out.table[out.best_index].tau;
  QuasiLinearFamily fam(grid, tau);
  out.best = QuasiLinearParams::unpack(tau, fits[out.best_index].params, fam.habitat_dim());
  out.best_fit = fits[out.best_index];
  if (opts.covariance) {
    SeparableObjective obj(fam, grid, DivergenceSpec::kl());
    out.best_fit.bread = numerical_bread(obj, out.best_fit.params);
    out.best_fit.meat = obj.meat(out.best_fit.params);
    try {
      out.best_fit.covariance = sandwich(out.best_fit.bread, out.best_fit.meat);
    } catch (const DomainError& e) {
      out.best_fit.message += std::string("; ") + e.what();
    }
  }
  out.bias_proportion = (1.0 - fam.habitat_share(out.best_fit.params).array()).matrix();
  return out;
}

}  // namespace sdm
