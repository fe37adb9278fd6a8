#pragma once

#include "sdm/core.hpp"

#include <algorithm>
#include <concepts>
#include <functional>
#include <string>

namespace sdm {

struct NewtonOptions {
  double tol = 1e-8;        // sup-norm of the gradient
  int max_iter = 200;
  double armijo = 1e-4;
  int max_halvings = 60;
  double ridge = 1e-8;      // initial jitter for non-PD Hessians, relative to max |diag|
  double fd_step = 1e-5;    // relative step for finite-difference Hessians
};

struct NewtonResult {
  Vector x;
  double value = kNaN;
  Vector gradient;
  double grad_norm = kInf;
  int iterations = 0;
  bool converged = false;
  bool ridged = false;         // a jittered Hessian was used at least once
  double min_hessian_eig = kNaN;  // at the final iterate
  std::string message;
};

template <class O>
concept SmoothObjective = requires(const O& o, const Vector& x) {
  { o.value(x) } -> std::convertible_to<double>;
  { o.gradient(x) } -> std::convertible_to<Vector>;
};

template <class O>
concept HasHessian = requires(const O& o, const Vector& x) {
  { o.hessian(x) } -> std::convertible_to<Matrix>;
};

// Central-difference Jacobian of a vector function. Falls back to a one-sided
// difference when one side leaves the function's domain.
template <class Fn>
Matrix numerical_jacobian(const Fn& fn, const Vector& x, double rel_step = 1e-5) {
  const Vector f0 = fn(x);
  Matrix jac(f0.size(), x.size());
  for (Index j = 0; j < x.size(); ++j) {
    const double h = rel_step * std::max(1.0, std::abs(x(j)));
    Vector xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    const Vector fp = fn(xp);
    const Vector fm = fn(xm);
    const bool okp = fp.allFinite(), okm = fm.allFinite();
    if (okp && okm) {
      jac.col(j) = (fp - fm) / (2 * h);
    } else if (okp) {
      jac.col(j) = (fp - f0) / h;
    } else if (okm) {
      jac.col(j) = (f0 - fm) / h;
    } else {
      jac.col(j).setConstant(kNaN);
    }
  }
  return jac;
}

template <class Fn>
Vector numerical_gradient(const Fn& fn, const Vector& x, double rel_step = 1e-6) {
  Vector g(x.size());
  for (Index j = 0; j < x.size(); ++j) {
    const double h = rel_step * std::max(1.0, std::abs(x(j)));
    Vector xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    g(j) = (fn(xp) - fn(xm)) / (2 * h);
  }
  return g;
}

template <SmoothObjective O>
Matrix objective_hessian(const O& obj, const Vector& x, double fd_step) {
  if constexpr (HasHessian<O>) {
    return obj.hessian(x);
  } else {
    Matrix h = numerical_jacobian([&](const Vector& y) -> Vector { return obj.gradient(y); }, x,
                                  fd_step);
    return 0.5 * (h + h.transpose());
  }
}

inline double min_eigenvalue(const Matrix& h) {
  if (h.size() == 0 || !h.allFinite()) return kNaN;
  Eigen::SelfAdjointEigenSolver<Matrix> es(h, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

// Damped Newton with Armijo backtracking (step halving). Non-PD Hessians get a
// diagonal jitter that grows tenfold until a Cholesky factorization succeeds.
// The objective may return +inf or NaN to mark points outside its domain.
template <SmoothObjective O>
NewtonResult minimize_newton(const O& obj, Vector x, const NewtonOptions& opt = {}) {
  NewtonResult res;
  double f = obj.value(x);
  if (!std::isfinite(f)) {
    res.x = std::move(x);
    res.message = "objective not finite at the starting point";
    return res;
  }
  Vector g = obj.gradient(x);
  Matrix h;
  for (int it = 0;; ++it) {
    res.iterations = it;
    const double gn = sup_norm(g);
    if (!std::isfinite(gn)) {
      res.message = "gradient not finite";
      break;
    }
    if (gn <= opt.tol) {
      res.converged = true;
      res.message = "converged";
      break;
    }
    if (it >= opt.max_iter) {
      res.message = "iteration limit reached";
      break;
    }

    h = objective_hessian(obj, x, opt.fd_step);
    Vector dir;
    if (h.allFinite()) {
      Eigen::LLT<Matrix> llt(h);
      if (llt.info() != Eigen::Success) {
        const double scale = std::max(1.0, h.diagonal().cwiseAbs().maxCoeff());
        double jitter = opt.ridge * scale;
        for (int k = 0; k < 40; ++k, jitter *= 10) {
          llt.compute(h + jitter * Matrix::Identity(h.rows(), h.cols()));
          if (llt.info() == Eigen::Success) break;
        }
        res.ridged = true;
      }
      if (llt.info() == Eigen::Success) dir = -llt.solve(g);
    }
    if (dir.size() == 0 || !dir.allFinite() || g.dot(dir) >= 0) dir = -g;

    const double slope = g.dot(dir);
    double t = 1.0;
    bool accepted = false;
    Vector x_new;
    double f_new = kNaN;
    Vector g_new;
    for (int k = 0; k <= opt.max_halvings; ++k, t *= 0.5) {
      x_new = x + t * dir;
      f_new = obj.value(x_new);
      if (!std::isfinite(f_new)) continue;
      if (f_new <= f + opt.armijo * t * slope) {
        accepted = true;
        break;
      }
      // Near the optimum the decrease falls below the rounding of f, and noise
      // would let Armijo accept microscopic steps. Take the full step when f is
      // flat to working precision and the gradient shrinks.
      if (k == 0 && std::abs(f_new - f) <= 1e-12 * (1.0 + std::abs(f))) {
        g_new = obj.gradient(x_new);
        if (g_new.allFinite() && sup_norm(g_new) < gn) {
          accepted = true;
          break;
        }
        g_new.resize(0);
      }
    }
    if (!accepted) {
      res.message = "line search failed";
      break;
    }
    x = std::move(x_new);
    f = f_new;
    g = g_new.size() ? std::move(g_new) : obj.gradient(x);
  }
  res.x = std::move(x);
  res.value = f;
  res.gradient = g;
  res.grad_norm = sup_norm(g);
  if (res.x.size() > 0) {
    res.min_hessian_eig = min_eigenvalue(objective_hessian(obj, res.x, opt.fd_step));
  }
  return res;
}

// Adapts lambdas into a SmoothObjective.
struct LambdaObjective {
  std::function<double(const Vector&)> f;
  std::function<Vector(const Vector&)> g;
  double value(const Vector& x) const { return f(x); }
  Vector gradient(const Vector& x) const { return g(x); }
};

}  // namespace sdm
