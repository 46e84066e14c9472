#pragma once

// D-IPG: residual-corrected proposals y_t - alpha r_t pulled back through g,
// relaxed toward x_t, projected onto the box, and accepted by Armijo
// backtracking on phi. All vectors are in the model's normalized coordinates.

#include <optional>

#include "deceptron/trace.hpp"

namespace deceptron {

struct DipgConfig {
  double alpha0 = 1.0;
  double c = 1e-4;
  double beta = 0.5;
  double rho = 0.4;
  int max_iters = 80;
  int backtrack_budget = 8;  // proposals tried per outer iteration
  std::optional<Box> box;
  double stop_rel_tol = 0.30;
  bool require_strict_decrease = true;
  bool record_rjcp = true;
  ProbeConfig rjcp_probes{ProbeDistribution::rademacher, 4, 0};  // seed is the run seed

  void validate(Eigen::Index dim) const {
    detail::require_arg(c > 0.0 && c < 1.0, "DipgConfig: c must be in (0,1)");
    detail::require_arg(beta > 0.0 && beta < 1.0, "DipgConfig: beta must be in (0,1)");
    detail::require_arg(rho > 0.0 && rho <= 1.0, "DipgConfig: rho must be in (0,1]");
    detail::require_arg(alpha0 > 0.0, "DipgConfig: alpha0 must be > 0");
    detail::require_arg(max_iters >= 0, "DipgConfig: max_iters must be >= 0");
    detail::require_arg(backtrack_budget >= 1, "DipgConfig: backtrack_budget must be >= 1");
    detail::require_arg(stop_rel_tol >= 0.0, "DipgConfig: stop_rel_tol must be >= 0");
    if (box) box->validate(dim);
  }
};

struct Proposal {
  Vector y_prop;
  Vector x_prop;
  Vector x_tilde;
  Vector p;
};

/// Proposal from precomputed y_t = f(x_t) and r_t = y_t - y*. At alpha = 1 the
/// measurement-space point is y* itself rather than y_t - r_t, so it is exact.
inline Proposal propose_from(const Deceptron& dec, const Vector& x_t, const Vector& y_t,
                             const Vector& r_t, const Vector& y_star, double alpha,
                             const DipgConfig& cfg) {
  detail::require_arg(alpha > 0.0, "propose: alpha must be > 0");
  Proposal out;
  out.y_prop = alpha == 1.0 ? y_star : Vector(y_t - alpha * r_t);
  out.x_prop = eval(dec.g, out.y_prop);
  out.x_tilde = (1.0 - cfg.rho) * x_t + cfg.rho * out.x_prop;
  if (cfg.box) out.x_tilde = cfg.box->project(out.x_tilde);
  out.p = out.x_tilde - x_t;
  return out;
}

inline Proposal propose(const Deceptron& dec, const Vector& x_t, const Vector& y_star,
                        double alpha, const DipgConfig& cfg) {
  detail::require_shape(y_star.size() == dec.measurement_dim(), "propose: y* has wrong length");
  const Vector y_t = eval(dec.f, x_t);
  return propose_from(dec, x_t, y_t, y_t - y_star, y_star, alpha, cfg);
}

inline SolveTrace solve(const Deceptron& dec, const Vector& y_star, const Vector& x0,
                        const DipgConfig& cfg, const std::optional<Vector>& ground_truth = {},
                        std::string method = "dipg") {
  cfg.validate(dec.latent_dim());
  detail::require_shape(x0.size() == dec.latent_dim(), "dipg::solve: x0 has wrong length");
  detail::require_shape(y_star.size() == dec.measurement_dim(), "dipg::solve: y* has wrong length");

  detail::TraceRecorder rec(std::move(method), dec, ground_truth);
  rec.trace().armijo_safeguarded = true;
  rec.trace().armijo_c = cfg.c;
  rec.trace().strict_decrease = cfg.require_strict_decrease;

  Vector x = x0;
  double r0 = 0.0;
  for (int t = 0;; ++t) {
    if (!x.allFinite()) return rec.finish(x, Termination::non_finite, "non-finite iterate at t=" + std::to_string(t));
    ObjectiveValue obj;
    try {
      obj = objective(dec.f, x, y_star);
    } catch (const NumericError& e) {
      return rec.finish(x, Termination::non_finite, e.what());
    }
    IterRecord r = rec.begin(t, x, obj);
    if (t == 0) r0 = r.residual_norm;
    if (cfg.record_rjcp) {
      Rng prng = make_rng(cfg.rjcp_probes.seed, std::uint64_t(t));
      r.rjcp = rjcp(dec.f, dec.g, x,
                    sample_probes(cfg.rjcp_probes.distribution, cfg.rjcp_probes.count, x.size(), prng));
    }
    if (residual_converged(r.residual_norm, r0, cfg.stop_rel_tol)) {
      rec.push(r);
      return rec.finish(x, Termination::tolerance);
    }
    if (t >= cfg.max_iters) {
      rec.push(r);
      return rec.finish(x, Termination::max_iters);
    }

    const Linearization lin(dec.f, x);
    const Vector grad = objective_gradient(lin, obj.r);
    const Vector& y_t = lin.value();
    double alpha = cfg.alpha0;
    std::optional<Proposal> accepted;
    for (int trial = 0; trial < cfg.backtrack_budget; ++trial) {
      Proposal prop = propose_from(dec, x, y_t, obj.r, y_star, alpha, cfg);
      r.backtracks_used = trial + 1;
      const double dd = grad.dot(prop.p);
      r.dir_deriv = dd;
      double phi_tilde = kNaN;
      if (prop.x_tilde.allFinite()) {
        try {
          phi_tilde = objective(dec.f, prop.x_tilde, y_star).phi;
        } catch (const NumericError&) {
        }
      }
      if (armijo_accept(obj.phi, phi_tilde, dd, cfg.c, cfg.require_strict_decrease)) {
        r.accepted = true;
        r.accepted_alpha = alpha;
        r.step_norm = prop.p.norm();
        r.cosine_neg_grad = cosine_with_neg_grad(grad, prop.p, dd);
        accepted = std::move(prop);
        break;
      }
      alpha *= cfg.beta;
    }
    rec.push(r);
    if (!accepted) return rec.finish(x, Termination::backtrack_exhausted);
    x = accepted->x_tilde;
  }
}

}  // namespace deceptron
