#pragma once

// Classical solvers on the same surrogate objective phi(x) = 0.5 mean((f(x)-y*)^2):
// gradient descent, Gauss-Newton and Levenberg-Marquardt through matrix-free
// CG on the normal equations, and L-BFGS. Traces share the D-IPG schema.

#include <deque>
#include <optional>
#include <string>
#include <utility>

#include "deceptron/trace.hpp"

namespace deceptron {

enum class BaselineMethod { gd, gn, lm, lbfgs };

inline std::string to_string(BaselineMethod m) {
  switch (m) {
    case BaselineMethod::gd: return "gd";
    case BaselineMethod::gn: return "gn";
    case BaselineMethod::lm: return "lm";
    case BaselineMethod::lbfgs: return "lbfgs";
  }
  return "gd";
}

inline BaselineMethod baseline_method_from_string(const std::string& s) {
  if (s == "gd") return BaselineMethod::gd;
  if (s == "gn") return BaselineMethod::gn;
  if (s == "lm") return BaselineMethod::lm;
  if (s == "lbfgs") return BaselineMethod::lbfgs;
  throw ArgumentError("unknown baseline method '" + s + "'");
}

struct BaselineConfig {
  BaselineMethod method = BaselineMethod::gn;
  int max_iters = 80;
  double stop_rel_tol = 0.30;
  double gd_lr = 1.0;
  double cg_tol = 1e-8;
  int cg_max_iters = 0;  // 0: 2 * d_in
  double lm_lambda0 = 1e-3;
  double lm_up = 10.0;
  double lm_down = 0.1;
  int lbfgs_memory = 10;
  bool gn_linesearch = true;
  double c = 1e-4;
  double beta = 0.5;
  int backtrack_budget = 8;  // line-search trials, or LM damping increases, per iteration
  std::optional<Box> box;

  void validate(Eigen::Index dim) const {
    detail::require_arg(cg_tol > 0.0, "BaselineConfig: cg_tol must be > 0");
    detail::require_arg(lm_up > 1.0, "BaselineConfig: lm_up must be > 1");
    detail::require_arg(lm_down > 0.0 && lm_down < 1.0, "BaselineConfig: lm_down must be in (0,1)");
    detail::require_arg(lbfgs_memory >= 1, "BaselineConfig: lbfgs_memory must be >= 1");
    detail::require_arg(c > 0.0 && c < 1.0, "BaselineConfig: c must be in (0,1)");
    detail::require_arg(beta > 0.0 && beta < 1.0, "BaselineConfig: beta must be in (0,1)");
    detail::require_arg(backtrack_budget >= 1, "BaselineConfig: backtrack_budget must be >= 1");
    detail::require_arg(gd_lr > 0.0, "BaselineConfig: gd_lr must be > 0");
    detail::require_arg(max_iters >= 0, "BaselineConfig: max_iters must be >= 0");
    if (box) box->validate(dim);
  }
};

// ---------------------------------------------------------------------------
// CG on the normal equations

struct CgResult {
  Vector x;
  int iterations = 0;
  double relative_residual = 0.0;  // true ||A x - rhs|| / ||rhs|| at exit
  bool breakdown = false;          // non-positive curvature encountered
};

/// Solve (J^T J + lambda I) dx = rhs with the operator v -> vjp(jvp(v)) + lambda v.
/// Stops when the recursive residual drops to tol * ||rhs|| or after max_iters.
template <class Jvp, class Vjp>
CgResult cg_normal(Jvp&& jvp, Vjp&& vjp, const Vector& rhs, double lambda, double tol,
                   int max_iters) {
  detail::require_arg(lambda >= 0.0, "cg_normal: lambda must be >= 0");
  auto apply = [&](const Vector& v) -> Vector { return vjp(jvp(v)) + lambda * v; };
  CgResult out;
  out.x = Vector::Zero(rhs.size());
  const double bnorm = rhs.norm();
  if (bnorm == 0.0) return out;
  Vector r = rhs, p = rhs;
  double rr = r.squaredNorm();
  Vector best = out.x;
  double best_rr = rr;
  for (int k = 0; k < max_iters; ++k) {
    const Vector ap = apply(p);
    const double pap = p.dot(ap);
    if (!(pap > 0.0)) {
      out.breakdown = true;
      break;
    }
    const double a = rr / pap;
    out.x += a * p;
    r -= a * ap;
    const double rr_next = r.squaredNorm();
    out.iterations = k + 1;
    if (rr_next < best_rr) {
      best_rr = rr_next;
      best = out.x;
    }
    if (std::sqrt(rr_next) <= tol * bnorm) break;
    p = r + (rr_next / rr) * p;
    rr = rr_next;
  }
  if (out.breakdown) out.x = best;
  out.relative_residual = (apply(out.x) - rhs).norm() / bnorm;
  return out;
}

/// cg_normal with J = J_f(x).
inline CgResult cg_normal(const DenseNet& f, const Vector& x, const Vector& rhs, double lambda,
                          double tol, int max_iters) {
  const Linearization lin(f, x);
  return cg_normal([&](const Vector& v) { return lin.jvp(v); },
                   [&](const Vector& u) { return lin.vjp(u); }, rhs, lambda, tol, max_iters);
}

// ---------------------------------------------------------------------------
// L-BFGS two-loop recursion

struct CurvaturePair {
  Vector s;
  Vector y;
  double rho = 0.0;  // 1 / <s, y>
};

/// Returns H grad for the limited-memory inverse Hessian with H0 = gamma I.
/// `memory` is ordered oldest first.
inline Vector lbfgs_two_loop(const Vector& grad, const std::deque<CurvaturePair>& memory,
                             double gamma) {
  Vector q = grad;
  std::vector<double> a(memory.size());
  for (std::size_t i = memory.size(); i-- > 0;) {
    a[i] = memory[i].rho * memory[i].s.dot(q);
    q -= a[i] * memory[i].y;
  }
  Vector r = gamma * q;
  for (std::size_t i = 0; i < memory.size(); ++i) {
    const double b = memory[i].rho * memory[i].y.dot(r);
    r += (a[i] - b) * memory[i].s;
  }
  return r;
}

/// Pushes (s, y) when <s, y> > 1e-10, evicting the oldest beyond `capacity`.
/// Returns whether the pair was stored.
inline bool lbfgs_update(std::deque<CurvaturePair>& memory, int capacity, Vector s, Vector y,
                         double& gamma) {
  const double sy = s.dot(y);
  if (!(sy > 1e-10)) return false;
  gamma = sy / y.squaredNorm();
  memory.push_back({std::move(s), std::move(y), 1.0 / sy});
  while (int(memory.size()) > capacity) memory.pop_front();
  return true;
}

// ---------------------------------------------------------------------------
// Solvers

namespace detail {

struct LineSearchOutcome {
  bool accepted = false;
  double alpha = 0.0;
  Vector x_new;
  Vector p;
  double dir_deriv = 0.0;
  int trials = 0;
};

/// Armijo backtracking along d from alpha = 1 with projection onto the box.
inline LineSearchOutcome armijo_backtrack(const DenseNet& f, const Vector& x, const Vector& y_star,
                                          double phi, const Vector& grad, const Vector& d,
                                          const BaselineConfig& cfg) {
  LineSearchOutcome out;
  double alpha = 1.0;
  for (int trial = 0; trial < cfg.backtrack_budget; ++trial) {
    Vector xn = x + alpha * d;
    if (cfg.box) xn = cfg.box->project(xn);
    Vector p = xn - x;
    const double dd = grad.dot(p);
    double phi_new = kNaN;
    if (xn.allFinite()) {
      try {
        phi_new = objective(f, xn, y_star).phi;
      } catch (const NumericError&) {
      }
    }
    out.trials = trial + 1;
    out.dir_deriv = dd;
    if (armijo_accept(phi, phi_new, dd, cfg.c, true)) {
      out.accepted = true;
      out.alpha = alpha;
      out.x_new = std::move(xn);
      out.p = std::move(p);
      return out;
    }
    alpha *= cfg.beta;
  }
  return out;
}

}  // namespace detail

/// Runs one of the classical baselines. Only dec.f is used (plus x_norm for RMSE).
inline SolveTrace solve_baseline(const Deceptron& dec, const Vector& y_star, const Vector& x0,
                                 const BaselineConfig& cfg,
                                 const std::optional<Vector>& ground_truth = {}) {
  cfg.validate(dec.latent_dim());
  detail::require_shape(x0.size() == dec.latent_dim(), "solve_baseline: x0 has wrong length");
  detail::require_shape(y_star.size() == dec.measurement_dim(), "solve_baseline: y* has wrong length");
  const DenseNet& f = dec.f;
  const int cg_iters = cfg.cg_max_iters > 0 ? cfg.cg_max_iters : 2 * dec.latent_dim();

  detail::TraceRecorder rec(to_string(cfg.method), dec, ground_truth);
  const bool safeguarded = cfg.method != BaselineMethod::gd &&
                           !(cfg.method == BaselineMethod::gn && !cfg.gn_linesearch);
  rec.trace().armijo_safeguarded = safeguarded;
  rec.trace().armijo_c = cfg.c;
  rec.trace().strict_decrease = true;

  double lambda = cfg.lm_lambda0;
  std::deque<CurvaturePair> memory;
  double gamma = 1.0;
  Vector prev_x, prev_grad;

  Vector x = x0;
  double r0 = 0.0;
  for (int t = 0;; ++t) {
    if (!x.allFinite()) return rec.finish(x, Termination::non_finite, "non-finite iterate at t=" + std::to_string(t));
    ObjectiveValue obj;
    try {
      obj = objective(f, x, y_star);
    } catch (const NumericError& e) {
      return rec.finish(x, Termination::non_finite, e.what());
    }
    IterRecord r = rec.begin(t, x, obj);
    if (t == 0) r0 = r.residual_norm;
    if (residual_converged(r.residual_norm, r0, cfg.stop_rel_tol)) {
      rec.push(r);
      return rec.finish(x, Termination::tolerance);
    }
    if (t >= cfg.max_iters) {
      rec.push(r);
      return rec.finish(x, Termination::max_iters);
    }
    const Linearization lin(f, x);
    const Vector grad = objective_gradient(lin, obj.r);
    auto jv = [&](const Vector& v) { return lin.jvp(v); };
    auto vj = [&](const Vector& u) { return lin.vjp(u); };

    std::optional<Vector> next;
    switch (cfg.method) {
      case BaselineMethod::gd: {
        Vector xn = x - cfg.gd_lr * grad;
        if (cfg.box) xn = cfg.box->project(xn);
        const Vector p = xn - x;
        r.backtracks_used = 1;
        r.dir_deriv = grad.dot(p);
        r.accepted = true;
        r.accepted_alpha = cfg.gd_lr;
        r.step_norm = p.norm();
        r.cosine_neg_grad = cosine_with_neg_grad(grad, p, r.dir_deriv);
        next = std::move(xn);
        break;
      }
      case BaselineMethod::gn: {
        const CgResult cg = cg_normal(jv, vj, Vector(-lin.vjp(obj.r)), 0.0, cfg.cg_tol, cg_iters);
        r.cg_relres = cg.relative_residual;
        if (cfg.gn_linesearch) {
          auto ls = detail::armijo_backtrack(f, x, y_star, obj.phi, grad, cg.x, cfg);
          r.backtracks_used = ls.trials;
          r.dir_deriv = ls.dir_deriv;
          if (ls.accepted) {
            r.accepted = true;
            r.accepted_alpha = ls.alpha;
            r.step_norm = ls.p.norm();
            r.cosine_neg_grad = cosine_with_neg_grad(grad, ls.p, ls.dir_deriv);
            next = std::move(ls.x_new);
          }
        } else {
          Vector xn = x + cg.x;
          if (cfg.box) xn = cfg.box->project(xn);
          const Vector p = xn - x;
          r.backtracks_used = 1;
          r.dir_deriv = grad.dot(p);
          r.accepted = true;
          r.accepted_alpha = 1.0;
          r.step_norm = p.norm();
          r.cosine_neg_grad = cosine_with_neg_grad(grad, p, r.dir_deriv);
          next = std::move(xn);
        }
        break;
      }
      case BaselineMethod::lm: {
        const Vector rhs = -lin.vjp(obj.r);
        for (int trial = 0; trial < cfg.backtrack_budget; ++trial) {
          const CgResult cg = cg_normal(jv, vj, rhs, lambda, cfg.cg_tol, cg_iters);
          Vector xn = x + cg.x;
          if (cfg.box) xn = cfg.box->project(xn);
          const Vector p = xn - x;
          const double dd = grad.dot(p);
          double phi_new = kNaN;
          if (xn.allFinite()) {
            try {
              phi_new = objective(f, xn, y_star).phi;
            } catch (const NumericError&) {
            }
          }
          r.backtracks_used = trial + 1;
          r.dir_deriv = dd;
          r.cg_relres = cg.relative_residual;
          if (armijo_accept(obj.phi, phi_new, dd, cfg.c, true)) {
            r.accepted = true;
            r.accepted_alpha = 1.0;
            r.damping = lambda;
            r.step_norm = p.norm();
            r.cosine_neg_grad = cosine_with_neg_grad(grad, p, dd);
            lambda *= cfg.lm_down;
            next = std::move(xn);
            break;
          }
          lambda *= cfg.lm_up;
        }
        break;
      }
      case BaselineMethod::lbfgs: {
        if (prev_x.size() > 0) lbfgs_update(memory, cfg.lbfgs_memory, x - prev_x, grad - prev_grad, gamma);
        Vector d = -lbfgs_two_loop(grad, memory, gamma);
        if (!(grad.dot(d) < 0.0)) {  // not a descent direction: restart from steepest descent
          memory.clear();
          gamma = 1.0;
          d = -grad;
        }
        auto ls = detail::armijo_backtrack(f, x, y_star, obj.phi, grad, d, cfg);
        r.backtracks_used = ls.trials;
        r.dir_deriv = ls.dir_deriv;
        if (ls.accepted) {
          r.accepted = true;
          r.accepted_alpha = ls.alpha;
          r.step_norm = ls.p.norm();
          r.cosine_neg_grad = cosine_with_neg_grad(grad, ls.p, ls.dir_deriv);
          prev_x = x;
          prev_grad = grad;
          next = std::move(ls.x_new);
        }
        break;
      }
    }
    rec.push(r);
    if (!next) return rec.finish(x, Termination::backtrack_exhausted);
    x = std::move(*next);
  }
}

}  // namespace deceptron
