#pragma once

// Objective, per-iteration records and solve traces shared by D-IPG and the
// classical baselines, plus CSV/JSON emitters and the post-hoc Armijo audit.

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deceptron/deceptron.hpp"
#include "deceptron/problems.hpp"

namespace deceptron {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct ObjectiveValue {
  double phi = 0.0;
  Vector r;
};

/// r = f(x) - y*, phi = 0.5 * mean(r^2).
inline ObjectiveValue objective(const DenseNet& f, const Vector& x, const Vector& y_star) {
  detail::require_shape(y_star.size() == f.output_dim(), "objective: y* has wrong length");
  ObjectiveValue o;
  o.r = eval(f, x) - y_star;
  o.phi = 0.5 * o.r.squaredNorm() / double(o.r.size());
  return o;
}

inline ObjectiveValue objective(const Deceptron& dec, const Vector& x, const Vector& y_star) {
  return objective(dec.f, x, y_star);
}

/// grad phi = J^T r / d_out.
inline Vector objective_gradient(const Linearization& lin, const Vector& r) {
  return lin.vjp(r) / double(r.size());
}

enum class Termination { tolerance, max_iters, backtrack_exhausted, non_finite };

inline std::string to_string(Termination t) {
  switch (t) {
    case Termination::tolerance: return "tolerance";
    case Termination::max_iters: return "max_iters";
    case Termination::backtrack_exhausted: return "backtrack_exhausted";
    case Termination::non_finite: return "non_finite";
  }
  return "unknown";
}

/// State at iterate x_t and the step taken from it (if any).
struct IterRecord {
  int t = 0;
  double residual_norm = 0.0;
  double phi = 0.0;
  double rmse = kNaN;  // against ground truth in raw latent units
  bool accepted = false;
  double accepted_alpha = 0.0;
  double step_norm = 0.0;
  double cosine_neg_grad = 0.0;
  double dir_deriv = 0.0;  // <grad phi(x_t), p_t> of the accepted (or last tried) step
  double rjcp = kNaN;
  int backtracks_used = 0;  // proposals evaluated at this iterate
  double wall_time_s = 0.0;  // elapsed since solve start when x_t was evaluated
  double damping = kNaN;     // LM lambda of the accepted step
  double cg_relres = kNaN;   // ||(J^T J + lambda I) dx - rhs|| / ||rhs|| for CG-based steps
};

struct SolveTrace {
  std::string method;
  std::vector<IterRecord> records;
  Vector final_x;
  Termination terminated_by = Termination::max_iters;
  double total_time_s = 0.0;
  std::string diagnostic;
  // Acceptance rule used, recorded for the post-hoc audit.
  bool armijo_safeguarded = false;
  double armijo_c = 0.0;
  bool strict_decrease = false;

  double r0() const { return records.empty() ? 0.0 : records.front().residual_norm; }
  const IterRecord& last() const { return records.back(); }
  int accepted_steps() const {
    int n = 0;
    for (const auto& r : records) n += r.accepted ? 1 : 0;
    return n;
  }
};

/// Stopping rule shared by every solver: ||r_t|| <= tol * ||r_0||.
inline bool residual_converged(double residual_norm, double r0, double tol) {
  return residual_norm <= tol * r0;
}

inline double cosine_with_neg_grad(const Vector& grad, const Vector& p, double dir_deriv) {
  const double den = grad.norm() * p.norm();
  if (den == 0.0) return 0.0;
  return std::clamp(-dir_deriv / den, -1.0, 1.0);
}

/// Armijo test phi(x~) <= phi(x_t) + c <grad, p>, optionally also phi(x~) < phi(x_t).
inline bool armijo_accept(double phi_t, double phi_tilde, double dir_deriv, double c,
                          bool require_strict) {
  if (!(phi_tilde <= phi_t + c * dir_deriv)) return false;
  if (require_strict && !(phi_tilde < phi_t)) return false;
  return true;
}

struct ArmijoAudit {
  int checked = 0;
  int violations = 0;
  double worst_margin = std::numeric_limits<double>::infinity();  // min of rhs - lhs
};

/// Re-verify every accepted step against the logged phi values and directional derivative.
inline ArmijoAudit audit_armijo(const SolveTrace& trace) {
  ArmijoAudit a;
  if (!trace.armijo_safeguarded) return a;
  for (std::size_t t = 0; t + 1 < trace.records.size(); ++t) {
    const auto& cur = trace.records[t];
    if (!cur.accepted) continue;
    const double next = trace.records[t + 1].phi;
    ++a.checked;
    a.worst_margin = std::min(a.worst_margin, cur.phi + trace.armijo_c * cur.dir_deriv - next);
    if (!armijo_accept(cur.phi, next, cur.dir_deriv, trace.armijo_c, trace.strict_decrease))
      ++a.violations;
  }
  return a;
}

enum class InitPolicy { warm, zeros };

inline InitPolicy init_policy_from_string(const std::string& s) {
  if (s == "warm") return InitPolicy::warm;
  if (s == "zeros") return InitPolicy::zeros;
  throw ArgumentError("unknown x0 policy '" + s + "'");
}

/// warm: project(g(y*)); zeros: project(0) (the training latent mean).
inline Vector initial_point(const Deceptron& dec, const Vector& y_star, InitPolicy policy,
                            const std::optional<Box>& box) {
  Vector x0 = policy == InitPolicy::warm ? eval(dec.g, y_star)
                                         : Vector::Zero(dec.latent_dim()).eval();
  return box ? box->project(x0) : x0;
}

namespace detail {

/// Timing, RMSE and record bookkeeping shared by all solvers.
class TraceRecorder {
 public:
  TraceRecorder(std::string method, const Deceptron& dec, const std::optional<Vector>& truth)
      : dec_(dec), truth_(truth), start_(std::chrono::steady_clock::now()) {
    trace_.method = std::move(method);
  }

  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

  IterRecord begin(int t, const Vector& x, const ObjectiveValue& obj) const {
    IterRecord rec;
    rec.t = t;
    rec.residual_norm = obj.r.norm();
    rec.phi = obj.phi;
    rec.wall_time_s = elapsed();
    if (truth_) rec.rmse = rmse(dec_.x_norm.invert(x), *truth_);
    return rec;
  }

  void push(const IterRecord& rec) { trace_.records.push_back(rec); }

  SolveTrace finish(Vector x, Termination why, std::string diagnostic = {}) {
    trace_.final_x = std::move(x);
    trace_.terminated_by = why;
    trace_.diagnostic = std::move(diagnostic);
    trace_.total_time_s = elapsed();
    return std::move(trace_);
  }

  SolveTrace& trace() { return trace_; }

 private:
  const Deceptron& dec_;
  const std::optional<Vector>& truth_;
  std::chrono::steady_clock::time_point start_;
  SolveTrace trace_;
};

inline void csv_num(std::ostream& out, double v) {
  if (std::isfinite(v)) out << v;
}

}  // namespace detail

inline void write_trace_csv(const SolveTrace& trace, std::ostream& out) {
  out.precision(12);
  out << "t,residual_norm,phi,rmse,accepted,accepted_alpha,step_norm,cosine_neg_grad,dir_deriv,"
         "rjcp,backtracks_used,wall_time_s,damping,cg_relres\n";
  for (const auto& r : trace.records) {
    out << r.t << ',' << r.residual_norm << ',' << r.phi << ',';
    detail::csv_num(out, r.rmse);
    out << ',' << (r.accepted ? 1 : 0) << ',' << r.accepted_alpha << ',' << r.step_norm << ','
        << r.cosine_neg_grad << ',' << r.dir_deriv << ',';
    detail::csv_num(out, r.rjcp);
    out << ',' << r.backtracks_used << ',' << r.wall_time_s << ',';
    detail::csv_num(out, r.damping);
    out << ',';
    detail::csv_num(out, r.cg_relres);
    out << '\n';
  }
}

inline nlohmann::json trace_summary(const SolveTrace& trace) {
  const double r0 = trace.r0();
  const auto& last = trace.last();
  nlohmann::json j{{"method", trace.method},
                   {"terminated_by", to_string(trace.terminated_by)},
                   {"records", trace.records.size()},
                   {"accepted_steps", trace.accepted_steps()},
                   {"r0", r0},
                   {"final_residual_norm", last.residual_norm},
                   {"final_residual_ratio", r0 > 0 ? last.residual_norm / r0 : 0.0},
                   {"final_phi", last.phi},
                   {"total_time_s", trace.total_time_s}};
  if (std::isfinite(last.rmse)) j["final_rmse"] = last.rmse;
  if (!trace.diagnostic.empty()) j["diagnostic"] = trace.diagnostic;
  return j;
}

}  // namespace deceptron
