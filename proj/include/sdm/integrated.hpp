#pragma once

#include "sdm/core.hpp"
#include "sdm/divergence.hpp"
#include "sdm/grid.hpp"
#include "sdm/models.hpp"
#include "sdm/optimize.hpp"
#include "sdm/parallel.hpp"
#include "sdm/simulate.hpp"
#include "sdm/survey.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace sdm {

struct PbModel {
  Vector beta_shared;   // intercept followed by habitat slopes
  Vector alpha_detect;  // accessibility coefficients; leading intercept only if opted in
};

// Presence-background intensity p(s, alpha) * lambda0(s, beta) with
// p = logistic(alpha'v). Parameters are packed as [beta, alpha].
class ThinnedFamily {
 public:
  static constexpr bool kLinearPredictor = false;

  explicit ThinnedFamily(const CovariateGrid& grid, bool access_intercept = false)
      : habitat_(with_intercept(grid.habitat())),
        access_(access_intercept ? with_intercept(grid.access()) : grid.access()),
        access_intercept_(access_intercept),
        xnames_(grid.names().x),
        vnames_(grid.names().v) {}

  Index dim() const { return beta_dim() + alpha_dim(); }
  Index beta_dim() const { return habitat_.cols(); }
  Index alpha_dim() const { return access_.cols(); }
  bool access_intercept() const { return access_intercept_; }
  const Matrix& habitat_design() const { return habitat_; }
  const Matrix& access_design() const { return access_; }

  Vector log_lambda0(const Vector& beta) const { return habitat_ * beta; }

  Vector access_logit(const Vector& alpha) const {
    if (alpha.size() == 0) return Vector::Zero(habitat_.rows());
    return access_ * alpha;
  }

  Vector retention(const Vector& alpha) const {
    return access_logit(alpha).unaryExpr([](double u) { return logistic(u); });
  }

  Vector log_intensity(const Vector& theta) const {
    Vector eta = habitat_ * theta.head(beta_dim());
    const Vector u = access_logit(theta.tail(alpha_dim()));
    for (Index i = 0; i < eta.size(); ++i) eta(i) -= log1pexp(-u(i));
    return eta;
  }

  Matrix jacobian(const Vector& theta) const {
    Matrix j(habitat_.rows(), dim());
    j.leftCols(beta_dim()) = habitat_;
    if (alpha_dim() > 0) {
      const Vector u = access_logit(theta.tail(alpha_dim()));
      const Vector q = u.unaryExpr([](double a) { return logistic(-a); });
      j.rightCols(alpha_dim()) = q.asDiagonal() * access_;
    }
    return j;
  }

  std::vector<std::string> param_names() const {
    std::vector<std::string> out{"beta0"};
    for (Index k = 1; k < beta_dim(); ++k) {
      const auto s = static_cast<std::size_t>(k - 1);
      out.push_back(s < xnames_.size() ? xnames_[s] : "x" + std::to_string(k));
    }
    if (access_intercept_) out.push_back("alpha0");
    const Index off = access_intercept_ ? 1 : 0;
    for (Index k = off; k < alpha_dim(); ++k) {
      const auto s = static_cast<std::size_t>(k - off);
      out.push_back(s < vnames_.size() ? "alpha_" + vnames_[s] : "alpha" + std::to_string(k + 1 - off));
    }
    return out;
  }

 private:
  Matrix habitat_;
  Matrix access_;
  bool access_intercept_;
  std::vector<std::string> xnames_, vnames_;
};

namespace detail {

inline bool alpha_has_intercept(const PbModel& pb, const CovariateGrid& grid) {
  if (pb.alpha_detect.size() == grid.r()) return false;
  if (pb.alpha_detect.size() == grid.r() + 1) return true;
  throw DomainError("accessibility coefficients do not match the number of v-covariates");
}

inline void check_beta(const Vector& beta, const CovariateGrid& grid) {
  if (beta.size() != 1 + grid.p()) throw DomainError("habitat coefficients do not match the grid");
  if (!beta.allFinite()) throw DomainError("non-finite habitat coefficients");
}

}  // namespace detail

// PB log-likelihood sum_pres log(p lambda0) - sum_i w_i p_i lambda0_i.
inline double loglik_pb(const PbModel& pb, const CovariateGrid& grid, Vector* gradient = nullptr) {
  detail::check_beta(pb.beta_shared, grid);
  ThinnedFamily fam(grid, detail::alpha_has_intercept(pb, grid));
  Vector theta(fam.dim());
  theta << pb.beta_shared, pb.alpha_detect;
  const Vector eta = fam.log_intensity(theta);
  const Vector& c = grid.counts();
  const Vector& w = grid.weights();
  double ll = 0;
  Vector resid(eta.size());
  for (Index i = 0; i < eta.size(); ++i) {
    if (!(eta(i) < kMaxLogIntensity)) {
      throw DomainError("intensity overflow at cell " + std::to_string(grid.ids()[static_cast<std::size_t>(i)]));
    }
    const double lam = std::exp(eta(i));
    ll += (c(i) > 0 ? c(i) * eta(i) : 0.0) - w(i) * lam;
    resid(i) = c(i) - w(i) * lam;
  }
  if (gradient) *gradient = fam.jacobian(theta).transpose() * resid;
  return ll;
}

// Psi = 1 - exp(-sum_{i in region} w_i lambda0_i)
inline double occupancy_prob(const Vector& beta, const CovariateGrid& grid, const std::vector<Index>& region) {
  detail::check_beta(beta, grid);
  if (region.empty()) throw ValidationError("occupancy_prob: empty region");
  double cum = 0;
  for (Index i : region) {
    if (i < 0 || i >= grid.size()) throw ValidationError("occupancy_prob: region outside the grid");
    const Cell cell = grid.cell(i);
    cum += cell.w * std::exp(beta(0) + cell.x.dot(beta.tail(beta.size() - 1)));
  }
  return -std::expm1(-cum);
}

// Site-occupancy log-likelihood. Detected rows contribute Psi * prod p(y|z);
// all-zero rows the mixture Psi * prod (1-p) + 1 - Psi, via log-sum-exp.
class OccupancyLikelihood {
 public:
  OccupancyLikelihood(const CovariateGrid& grid, SurveyDesign design, SurveyData data)
      : habitat_(with_intercept(grid.habitat())),
        w_(grid.weights()),
        design_(std::move(design)),
        data_(std::move(data)) {
    design_.validate(grid.size());
    data_.validate(design_);
  }

  Index beta_dim() const { return habitat_.cols(); }
  Index tau_dim() const { return 1 + design_.detection_dim(); }
  Index num_regions() const { return design_.num_regions(); }
  const SurveyDesign& design() const { return design_; }
  const SurveyData& data() const { return data_; }

  // Returns -inf when a detected region has Psi = 0. `scores` gets one column
  // per region holding that region's gradient contribution.
  double evaluate(const Vector& beta, const Vector& tau, Vector* g_beta = nullptr, Vector* g_tau = nullptr,
                  Matrix* scores = nullptr) const {
    const Index nb = beta_dim(), nt = tau_dim();
    const Vector eta = habitat_ * beta;
    if (g_beta) g_beta->setZero(nb);
    if (g_tau) g_tau->setZero(nt);
    if (scores) scores->setZero(nb + nt, num_regions());
    double total = 0;
    Vector zt(nt), gsum(nb), dt(nt);
    for (Index k = 0; k < num_regions(); ++k) {
      const auto& cells = design_.regions[static_cast<std::size_t>(k)];
      double cum = 0;
      gsum.setZero();
      for (Index i : cells) {
        const double e = w_(i) * std::exp(eta(i));
        cum += e;
        gsum += e * habitat_.row(i).transpose();
      }
      if (!std::isfinite(cum)) return -kInf;
      const double log_psi = cum > 0 ? std::log(-std::expm1(-cum)) : -kInf;
      const Matrix& z = design_.detection[static_cast<std::size_t>(k)];
      const bool detected = data_.y.row(k).sum() > 0;
      double lk = 0, dl = 0;
      dt.setZero();
      if (detected) {
        if (log_psi == -kInf) return -kInf;
        lk = log_psi;
        dl = 1.0 / std::expm1(cum);
        for (Index j = 0; j < design_.visits; ++j) {
          zt << 1.0, z.row(j).transpose();
          const double u = zt.dot(tau);
          const double y = data_.y(k, j);
          lk -= y > 0 ? log1pexp(-u) : log1pexp(u);
          dt += (y - logistic(u)) * zt;
        }
      } else {
        double log_q = 0;
        for (Index j = 0; j < design_.visits; ++j) {
          zt << 1.0, z.row(j).transpose();
          log_q -= log1pexp(zt.dot(tau));
        }
        lk = log_add_exp(log_psi + log_q, -cum);
        dl = std::exp(log_q - cum - lk) - std::exp(-cum - lk);
        const double share = std::exp(log_psi + log_q - lk);
        for (Index j = 0; j < design_.visits; ++j) {
          zt << 1.0, z.row(j).transpose();
          dt -= share * logistic(zt.dot(tau)) * zt;
        }
      }
      total += lk;
      if (g_beta) *g_beta += dl * gsum;
      if (g_tau) *g_tau += dt;
      if (scores) {
        scores->col(k).head(nb) = dl * gsum;
        scores->col(k).tail(nt) = dt;
      }
    }
    return total;
  }

 private:
  Matrix habitat_;
  Vector w_;
  SurveyDesign design_;
  SurveyData data_;
};

inline double loglik_so(const Vector& beta, const Vector& tau, const CovariateGrid& grid,
                        const SurveyDesign& design, const SurveyData& data, Vector* g_beta = nullptr,
                        Vector* g_tau = nullptr) {
  detail::check_beta(beta, grid);
  OccupancyLikelihood so(grid, design, data);
  if (tau.size() != so.tau_dim()) throw DomainError("detection coefficients do not match the design");
  const double ll = so.evaluate(beta, tau, g_beta, g_tau);
  if (ll == -kInf) {
    throw DomainError("occupancy probability is zero in a region with detections");
  }
  return ll;
}

// ---------------------------------------------------------------------------
// Joint objective over [beta, alpha, tau]; either part can be switched off.
// The PB part is a separable divergence in lambda = p * lambda0 (KL gives the
// likelihood, a U-cdf gives the robust weighting).

class IntegratedObjective {
 public:
  IntegratedObjective(const CovariateGrid& grid, const ThinnedFamily& family, const OccupancyLikelihood* so,
                      const DivergenceSpec& pb_spec, bool use_pb, bool use_so)
      : family_(family),
        so_(so),
        pb_(family, grid, pb_spec),
        use_pb_(use_pb),
        use_so_(use_so && so != nullptr && so->num_regions() > 0) {}

  Index beta_dim() const { return family_.beta_dim(); }
  Index alpha_dim() const { return use_pb_ ? family_.alpha_dim() : 0; }
  Index tau_dim() const { return use_so_ ? so_->tau_dim() : 0; }
  Index dim() const { return beta_dim() + alpha_dim() + tau_dim(); }
  bool uses_pb() const { return use_pb_; }
  bool uses_so() const { return use_so_; }

  double value(const Vector& x) const {
    double v = 0;
    if (use_pb_) {
      v += pb_.value(x.head(beta_dim() + alpha_dim()));
      if (!std::isfinite(v)) return kInf;
    }
    if (use_so_) {
      const double l = so_->evaluate(x.head(beta_dim()), x.tail(tau_dim()));
      if (!std::isfinite(l)) return kInf;
      v -= l;
    }
    return v;
  }

  Vector gradient(const Vector& x) const {
    Vector g = Vector::Zero(dim());
    const Index nb = beta_dim(), na = alpha_dim(), nt = tau_dim();
    if (use_pb_) g.head(nb + na) = pb_.gradient(x.head(nb + na));
    if (use_so_) {
      Vector gb, gt;
      so_->evaluate(x.head(nb), x.tail(nt), &gb, &gt);
      g.head(nb) -= gb;
      g.tail(nt) -= gt;
    }
    return g;
  }

  Vector estimating_function(const Vector& x) const { return -gradient(x); }

  // Per-point PB outer products plus per-region SO score outer products.
  Matrix meat(const Vector& x) const {
    const Index nb = beta_dim(), na = alpha_dim(), nt = tau_dim();
    Matrix k = Matrix::Zero(dim(), dim());
    if (use_pb_) k.topLeftCorner(nb + na, nb + na) = pb_.meat(x.head(nb + na));
    if (use_so_) {
      Matrix s;
      so_->evaluate(x.head(nb), x.tail(nt), nullptr, nullptr, &s);
      Matrix full = Matrix::Zero(dim(), s.cols());
      full.topRows(nb) = s.topRows(nb);
      full.bottomRows(nt) = s.bottomRows(nt);
      k += full * full.transpose();
    }
    return k;
  }

  std::vector<std::string> param_names(const std::vector<std::string>& tau_names) const {
    auto all = family_.param_names();
    std::vector<std::string> out(all.begin(), all.begin() + beta_dim() + alpha_dim());
    if (use_so_) out.insert(out.end(), tau_names.begin(), tau_names.end());
    return out;
  }

 private:
  const ThinnedFamily& family_;
  const OccupancyLikelihood* so_;
  SeparableObjective<ThinnedFamily> pb_;
  bool use_pb_, use_so_;
};

struct IntegratedOptions {
  FitOptions fit{};
  bool access_intercept = false;
  int fisher_replicates = 100;  // 0 reports observed information only
  std::uint64_t seed = 20240101;
  int workers = 1;
};

struct FisherBlocks {
  Matrix pb, so, integrated;
};

struct IntegratedFit {
  std::string method;
  Vector beta_shared, alpha_detect, tau_detect;
  FitResult integrated;  // params packed as [beta, alpha, tau]
  FitResult pb_only;     // [beta, alpha]
  FitResult so_only;     // [beta, tau]
  Matrix fisher_pb, fisher_so, fisher_integrated;  // Monte-Carlo expected beta blocks
  FisherBlocks observed;                           // at the data
  std::vector<std::string> warnings;
  bool converged = false;
};

// True when the constant function lies in the span of the accessibility
// design, i.e. alpha can absorb a shift of beta0.
inline bool access_confounded(const CovariateGrid& grid, bool access_intercept) {
  if (access_intercept) return true;
  if (grid.r() == 0) return false;
  const Matrix v = grid.access();
  Eigen::ColPivHouseholderQR<Matrix> q1(v);
  q1.setThreshold(1e-10);
  Eigen::ColPivHouseholderQR<Matrix> q2(with_intercept(v));
  q2.setThreshold(1e-10);
  return q2.rank() == q1.rank();
}

namespace detail {

inline std::vector<std::string> tau_names(const SurveyDesign& design) {
  std::vector<std::string> out{"tau0"};
  for (Index j = 0; j < design.detection_dim(); ++j) out.push_back("tau" + std::to_string(j + 1));
  return out;
}

inline FitResult run_integrated_part(const CovariateGrid& grid, const ThinnedFamily& fam,
                                     const OccupancyLikelihood* so, const DivergenceSpec& spec, bool use_pb,
                                     bool use_so, const Vector& x0, const FitOptions& opts,
                                     const std::string& method, const std::vector<std::string>& tnames) {
  IntegratedObjective obj(grid, fam, so, spec, use_pb, use_so);
  FitResult fit;
  fit.method = method;
  fit.param_names = obj.param_names(tnames);
  NewtonResult nr = minimize_newton(obj, x0, opts.newton);
  fit.params = nr.x;
  fit.objective = nr.value;
  fit.iterations = nr.iterations;
  fit.converged = nr.converged;
  fit.ridge_stabilized = nr.ridged;
  fit.message = nr.message;
  fit.score_norm = nr.grad_norm;
  fit.num_params = obj.dim();
  if (spec.is_likelihood() && std::isfinite(fit.objective)) {
    fit.loglik = -fit.objective;
    fit.aic = 2.0 * static_cast<double>(fit.num_params) - 2.0 * fit.loglik;
  }
  if (opts.covariance && fit.converged) {
    fit.bread = objective_hessian(obj, fit.params, opts.newton.fd_step);
    fit.meat = obj.meat(fit.params);
    try {
      fit.covariance = sandwich(fit.bread, fit.meat);
      fit.tic = tic_value(fit.bread, fit.meat, fit.objective);
    } catch (const DomainError& e) {
      fit.message += std::string("; ") + e.what();
    }
  }
  return fit;
}

inline Matrix beta_block(const IntegratedObjective& obj, const Vector& x, double fd_step) {
  return objective_hessian(obj, x, fd_step).topLeftCorner(obj.beta_dim(), obj.beta_dim());
}

}  // namespace detail

// Negative Hessian beta blocks of l_PB, l_SO and l_I at theta = [beta, alpha, tau].
inline FisherBlocks observed_fisher(const CovariateGrid& grid, const ThinnedFamily& fam,
                                    const OccupancyLikelihood& so, const Vector& theta, double fd_step = 1e-5) {
  const Index nb = fam.beta_dim(), na = fam.alpha_dim();
  const Index nt = theta.size() - nb - na;
  const DivergenceSpec kl = DivergenceSpec::kl();
  FisherBlocks out;
  IntegratedObjective pb(grid, fam, &so, kl, true, false);
  out.pb = detail::beta_block(pb, theta.head(nb + na), fd_step);
  IntegratedObjective joint(grid, fam, &so, kl, true, true);
  if (joint.uses_so()) {
    IntegratedObjective sov(grid, fam, &so, kl, false, true);
    Vector xs(nb + nt);
    xs << theta.head(nb), theta.tail(nt);
    out.so = detail::beta_block(sov, xs, fd_step);
    out.integrated = detail::beta_block(joint, theta, fd_step);
  } else {
    out.so = Matrix::Zero(nb, nb);
    out.integrated = out.pb;
  }
  return out;
}

// Expected information: average of observed blocks over datasets simulated at
// theta. Replicate r uses its own substreams, so the result does not depend on
// the worker count.
inline FisherBlocks monte_carlo_fisher(const CovariateGrid& grid, const SurveyDesign& design, const Vector& theta,
                                       bool access_intercept, int replicates, std::uint64_t seed, int workers = 1) {
  ThinnedFamily fam(grid, access_intercept);
  const Index nb = fam.beta_dim(), na = fam.alpha_dim();
  const Index nt = theta.size() - nb - na;
  const Vector log_pb = fam.log_intensity(theta.head(nb + na));
  const Vector log_l0 = fam.log_lambda0(theta.head(nb));
  std::vector<FisherBlocks> reps(static_cast<std::size_t>(std::max(replicates, 0)));
  parallel_for(replicates, workers, [&](Index r) {
    CounterRng prng(seed, static_cast<std::uint64_t>(r), Stream::Presence);
    const CovariateGrid g = grid.with_counts(simulate_ppp(log_pb, grid.weights(), prng));
    SurveyData data;
    if (nt > 0) {
      CounterRng srng(seed, static_cast<std::uint64_t>(r), Stream::Survey);
      data = simulate_so(log_l0, grid.weights(), design, theta.tail(nt), srng);
    } else {
      data.y = Matrix::Zero(0, design.visits);
    }
    ThinnedFamily f(g, access_intercept);
    OccupancyLikelihood so(g, design, data);
    reps[static_cast<std::size_t>(r)] = observed_fisher(g, f, so, theta);
  });
  FisherBlocks avg{Matrix::Zero(nb, nb), Matrix::Zero(nb, nb), Matrix::Zero(nb, nb)};
  for (const auto& b : reps) {
    avg.pb += b.pb;
    avg.so += b.so;
    avg.integrated += b.integrated;
  }
  if (replicates > 0) {
    avg.pb /= replicates;
    avg.so /= replicates;
    avg.integrated /= replicates;
  }
  return avg;
}

// Joint PB + SO fit, with the PB part under `pb_spec` (KL for the plain
// likelihood). Also fits each data source alone with the same engine.
inline IntegratedFit fit_integrated_with(const CovariateGrid& grid, const SurveyDesign& design,
                                         const SurveyData& data, const DivergenceSpec& pb_spec,
                                         const IntegratedOptions& opts = {}) {
  pb_spec.validate();
  if (pb_spec.kind != DivergenceKind::KL && pb_spec.kind != DivergenceKind::UCdf) {
    throw ConfigError("integrated fits support the likelihood or a U-cdf weighting");
  }
  if (grid.total_presence() < 1) throw ValidationError("integrated fit requires at least one presence");
  const bool have_so = design.num_regions() > 0;
  ThinnedFamily fam(grid, opts.access_intercept);
  std::optional<OccupancyLikelihood> so;
  if (have_so) so.emplace(grid, design, data);
  const OccupancyLikelihood* sop = so ? &*so : nullptr;
  const auto tnames = detail::tau_names(design);
  const Index nb = fam.beta_dim(), na = fam.alpha_dim();
  const Index nt = have_so ? sop->tau_dim() : 0;
  const bool robust = pb_spec.kind == DivergenceKind::UCdf;

  IntegratedFit out;
  out.method = robust ? "integrated-robust" : "integrated";
  if (access_confounded(grid, opts.access_intercept)) {
    out.warnings.push_back("accessibility covariates span a constant; alpha is confounded with beta0 in the PB-only fit");
  }

  // PB-only: start from the constant-intensity solution with p = 1/2.
  Vector x_pb = Vector::Zero(nb + na);
  const double n = grid.total_presence();
  x_pb(0) = std::log(n / grid.weights().sum()) + std::log(2.0);
  out.pb_only = detail::run_integrated_part(grid, fam, sop, pb_spec, true, false, x_pb, opts.fit,
                                            robust ? "pb-only-robust" : "pb-only", tnames);

  if (have_so) {
    // SO-only: invert a naive occupancy rate for beta0.
    const auto s = data.s_flags();
    double occ = 0, mean_area = 0;
    for (std::size_t k = 0; k < s.size(); ++k) {
      occ += 1 - s[k];
      for (Index i : design.regions[k]) mean_area += grid.weights()(i);
    }
    occ = std::clamp(occ / static_cast<double>(s.size()), 0.05, 0.95);
    mean_area /= static_cast<double>(s.size());
    Vector x_so = Vector::Zero(nb + nt);
    x_so(0) = std::log(-std::log1p(-occ) / mean_area);
    out.so_only = detail::run_integrated_part(grid, fam, sop, DivergenceSpec::kl(), false, true, x_so, opts.fit,
                                              "so-only", tnames);
  } else {
    out.so_only.method = "so-only";
    out.so_only.message = "no survey data";
  }

  Vector x0(nb + na + nt);
  const Vector start_pb = out.pb_only.params.allFinite() ? out.pb_only.params : x_pb;
  x0.head(nb + na) = start_pb;
  if (nt > 0) {
    x0.tail(nt) = out.so_only.params.size() == nb + nt && out.so_only.params.allFinite()
                      ? Vector(out.so_only.params.tail(nt))
                      : Vector::Zero(nt);
  }
  out.integrated = detail::run_integrated_part(grid, fam, sop, pb_spec, true, true, x0, opts.fit, out.method, tnames);
  out.converged = out.integrated.converged;
  if (!out.converged) out.warnings.push_back("integrated fit did not converge: " + out.integrated.message);

  const Vector& th = out.integrated.params;
  out.beta_shared = th.head(nb);
  out.alpha_detect = th.segment(nb, na);
  out.tau_detect = th.tail(nt);

  if (th.allFinite()) {
    if (sop) {
      out.observed = observed_fisher(grid, fam, *sop, th, opts.fit.newton.fd_step);
    } else {
      OccupancyLikelihood empty(grid, SurveyDesign{}, SurveyData{Matrix::Zero(0, 1)});
      out.observed = observed_fisher(grid, fam, empty, th, opts.fit.newton.fd_step);
    }
    if (opts.fisher_replicates > 0) {
      const FisherBlocks mc = monte_carlo_fisher(grid, design, th, opts.access_intercept, opts.fisher_replicates,
                                                 opts.seed, opts.workers);
      out.fisher_pb = mc.pb;
      out.fisher_so = mc.so;
      out.fisher_integrated = mc.integrated;
    } else {
      out.fisher_pb = out.observed.pb;
      out.fisher_so = out.observed.so;
      out.fisher_integrated = out.observed.integrated;
    }
  }
  return out;
}

inline IntegratedFit fit_integrated(const CovariateGrid& grid, const SurveyDesign& design, const SurveyData& data,
                                    const IntegratedOptions& opts = {}) {
  return fit_integrated_with(grid, design, data, DivergenceSpec::kl(), opts);
}

inline IntegratedFit fit_integrated_robust(const CovariateGrid& grid, const SurveyDesign& design,
                                           const SurveyData& data, CdfSpec cdf, double ucdf_tau,
                                           const IntegratedOptions& opts = {}) {
  return fit_integrated_with(grid, design, data, DivergenceSpec::u_cdf(cdf.family, ucdf_tau), opts);
}

// ---------------------------------------------------------------------------
// Distance sampling with a half-normal detection function.

class DsObjective {
 public:
  DsObjective(const DsArea& area, const std::vector<DsPoint>& points)
      : habitat_(with_intercept(area.grid.habitat())),
        w_(area.grid.weights()),
        distance_(area.distance),
        scale_(with_intercept(area.scale)),
        points_(points) {
    for (const auto& pt : points_) {
      if (pt.cell < 0 || pt.cell >= habitat_.rows()) throw ValidationError("detection outside the survey area");
      if (pt.scale.size() != area.scale.cols()) throw ValidationError("detection scale covariates have wrong size");
    }
  }

  Index beta_dim() const { return habitat_.cols(); }
  Index omega_dim() const { return scale_.cols(); }
  Index dim() const { return beta_dim() + omega_dim(); }

  // Log-likelihood, with optional gradient and per-point scores.
  double loglik(const Vector& x, Vector* grad = nullptr, Matrix* scores = nullptr) const {
    const Index nb = beta_dim(), no = omega_dim();
    const Vector beta = x.head(nb), omega = x.tail(no);
    const Vector eta = habitat_ * beta;
    const Vector ls = scale_ * omega;
    double ll = 0;
    if (grad) grad->setZero(dim());
    if (scores) scores->resize(dim(), static_cast<Index>(points_.size()));
    Vector ut(no);
    for (std::size_t k = 0; k < points_.size(); ++k) {
      const auto& pt = points_[k];
      ut << 1.0, pt.scale;
      const double r2 = pt.distance * pt.distance * std::exp(-2.0 * ut.dot(omega));
      ll += eta(pt.cell) - 0.5 * r2;
      if (grad || scores) {
        Vector s(dim());
        s << habitat_.row(pt.cell).transpose(), r2 * ut;
        if (grad) *grad += s;
        if (scores) scores->col(static_cast<Index>(k)) = s;
      }
    }
    for (Index i = 0; i < eta.size(); ++i) {
      if (!(eta(i) < kMaxLogIntensity)) return -kInf;
      const double r2 = distance_(i) * distance_(i) * std::exp(-2.0 * ls(i));
      const double mass = w_(i) * std::exp(eta(i) - 0.5 * r2);
      ll -= mass;
      if (grad) {
        grad->head(nb) -= mass * habitat_.row(i).transpose();
        grad->tail(no) -= mass * r2 * scale_.row(i).transpose();
      }
    }
    return ll;
  }

  double value(const Vector& x) const {
    const double ll = loglik(x);
    return std::isfinite(ll) ? -ll : kInf;
  }
  Vector gradient(const Vector& x) const {
    Vector g;
    loglik(x, &g);
    return -g;
  }
  Matrix meat(const Vector& x) const {
    Matrix s;
    loglik(x, nullptr, &s);
    return s * s.transpose();
  }

 private:
  Matrix habitat_;
  Vector w_;
  Vector distance_;
  Matrix scale_;
  const std::vector<DsPoint>& points_;
};

inline double loglik_ds(const Vector& beta, const DsData& ds, const DsArea& area, Vector* gradient = nullptr) {
  area.validate();
  detail::check_beta(beta, area.grid);
  if (ds.omega.size() != 1 + area.scale.cols()) throw DomainError("omega does not match the scale covariates");
  DsObjective obj(area, ds.points);
  Vector x(obj.dim());
  x << beta, ds.omega;
  const double ll = obj.loglik(x, gradient);
  if (!std::isfinite(ll)) throw DomainError("distance-sampling intensity overflow");
  return ll;
}

// Maximum-likelihood fit of (beta, omega); params packed [beta, omega].
inline FitResult fit_ds(const DsArea& area, const DsData& ds, const FitOptions& opts = {}) {
  area.validate();
  if (ds.points.empty()) throw ValidationError("distance-sampling fit requires at least one detection");
  DsObjective obj(area, ds.points);
  Vector x0 = Vector::Zero(obj.dim());
  double msd = 0;
  for (const auto& pt : ds.points) msd += pt.distance * pt.distance;
  msd /= static_cast<double>(ds.points.size());
  const double log_sigma = msd > 0 ? 0.5 * std::log(msd) : 0.0;
  double eff = 0;
  for (Index i = 0; i < area.grid.size(); ++i) eff += area.grid.weights()(i) * half_normal(area.distance(i), log_sigma);
  x0(0) = std::log(static_cast<double>(ds.points.size()) / std::max(eff, 1e-300));
  x0(obj.beta_dim()) = log_sigma;

  FitResult fit;
  fit.method = "ds";
  fit.param_names.push_back("beta0");
  for (Index k = 1; k < obj.beta_dim(); ++k) {
    const auto s = static_cast<std::size_t>(k - 1);
    fit.param_names.push_back(s < area.grid.names().x.size() ? area.grid.names().x[s] : "x" + std::to_string(k));
  }
  fit.param_names.push_back("omega0");
  for (Index k = 1; k < obj.omega_dim(); ++k) fit.param_names.push_back("omega" + std::to_string(k));

  NewtonResult nr = minimize_newton(obj, x0, opts.newton);
  fit.params = nr.x;
  fit.objective = nr.value;
  fit.loglik = -nr.value;
  fit.iterations = nr.iterations;
  fit.converged = nr.converged;
  fit.ridge_stabilized = nr.ridged;
  fit.message = nr.message;
  fit.score_norm = nr.grad_norm;
  fit.num_params = obj.dim();
  fit.aic = 2.0 * static_cast<double>(fit.num_params) + 2.0 * nr.value;
  if (opts.covariance && fit.converged) {
    fit.bread = objective_hessian(obj, fit.params, opts.newton.fd_step);
    fit.meat = obj.meat(fit.params);
    try {
      fit.covariance = sandwich(fit.bread, fit.meat);
      fit.tic = tic_value(fit.bread, fit.meat, fit.objective);
    } catch (const DomainError& e) {
      fit.message += std::string("; ") + e.what();
    }
  }
  return fit;
}

}  // namespace sdm
