#pragma once

// Numeric checks of the local Gauss-Newton relations for D-IPG:
//   - first-order expansion of the pullback g(y - a r) (slope-2 remainder),
//   - the range-restricted deviation bound a ||GJ - I||_2 ||r|| / sigma_min(J),
//   - exact agreement when G = J^+,
//   - the full-residual split r = r_par + r_perp,
//   - Hutchinson's identity E||A xi||^2 = ||A||_F^2 and ||A||_2 <= ||A||_F.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deceptron/deceptron.hpp"
#include "deceptron/linalg.hpp"

namespace deceptron {

struct LocalLinearization {
  Matrix J;       // J_f(x)
  Matrix G;       // J_g(f(x))
  Vector r;       // f(x) - y*, empty when no y* given
  Matrix J_pinv;  // (J^T J)^{-1} J^T
  Matrix E;       // G - J_pinv
  double sigma_min = 0.0;
};

inline LocalLinearization materialize_local(const DenseNet& f, const DenseNet& g, const Vector& x,
                                            const Vector* y_star = nullptr) {
  detail::check_pair(f, g);
  LocalLinearization out;
  const Vector y = eval(f, x);
  out.J = jacobian_by_jvp(f, x);
  out.G = jacobian_by_jvp(g, y);
  out.sigma_min = smallest_singular_value(out.J).value;
  if (!(out.sigma_min > 1e-8))
    throw RankDeficientError("J_f(x) is rank deficient: sigma_min = " + std::to_string(out.sigma_min));
  out.J_pinv = pseudo_inverse(out.J);
  out.E = out.G - out.J_pinv;
  if (y_star) out.r = y - *y_star;
  return out;
}

inline LocalLinearization materialize_local(const Deceptron& dec, const Vector& x,
                                            const Vector& y_star) {
  return materialize_local(dec.f, dec.g, x, &y_star);
}

// ---------------------------------------------------------------------------
// First-order expansion

struct SlopeFit {
  std::vector<double> alphas;
  std::vector<double> deviations;
  double fitted_slope = std::numeric_limits<double>::quiet_NaN();
  double r_squared = std::numeric_limits<double>::quiet_NaN();
  double max_deviation = 0.0;
};

/// alphas geometrically spaced from hi down to lo, `per_decade` points per decade.
inline std::vector<double> alpha_grid(double hi = 1e-2, double lo = 1e-5, int per_decade = 4) {
  std::vector<double> a;
  const int n = int(std::lround(std::log10(hi / lo) * per_decade));
  for (int i = 0; i <= n; ++i) a.push_back(hi * std::pow(10.0, -double(i) / per_decade));
  return a;
}

/// Least-squares line through (log a, log d) over positive deviations.
inline void fit_loglog(SlopeFit& fit) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < fit.alphas.size(); ++i)
    if (fit.deviations[i] > 0.0) {
      lx.push_back(std::log(fit.alphas[i]));
      ly.push_back(std::log(fit.deviations[i]));
    }
  if (lx.size() < 2) return;
  const double n = double(lx.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  fit.fitted_slope = sxy / sxx;
  fit.r_squared = syy > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
}

enum class FirstOrderMode {
  constructed,       // requires g(f(x)) == x within 1e-6
  offset_subtracted  // trained models: expand around g(f(x)) instead of x
};

/// deviation(a) = || g(f(x) - a r) - (x - a J^+ r - a E r) ||.
inline SlopeFit check_first_order(const DenseNet& f, const DenseNet& g, const Vector& x,
                                  const Vector& y_star, const std::vector<double>& alphas,
                                  FirstOrderMode mode = FirstOrderMode::constructed) {
  const LocalLinearization loc = materialize_local(f, g, x, &y_star);
  const Vector y = eval(f, x);
  const Vector gy = eval(g, y);
  const double consistency = (gy - x).norm();
  if (mode == FirstOrderMode::constructed && consistency > 1e-6)
    throw HypothesisViolation("g(f(x)) != x: consistency defect " + std::to_string(consistency));
  const Vector base = mode == FirstOrderMode::constructed ? x : gy;
  SlopeFit fit;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    const double a = alphas[i];
    detail::require_arg(a > 0.0 && (i == 0 || a < alphas[i - 1]), "alphas must be positive and strictly decreasing");
    const Vector pulled = eval(g, Vector(y - a * loc.r));
    const Vector predicted = base - a * (loc.J_pinv * loc.r) - a * (loc.E * loc.r);
    const double d = (pulled - predicted).norm();
    fit.alphas.push_back(a);
    fit.deviations.push_back(d);
    fit.max_deviation = std::max(fit.max_deviation, d);
  }
  fit_loglog(fit);
  return fit;
}

/// Shift g's output bias so that g(y) == x exactly (up to rounding).
inline void make_consistent(DenseNet& g, const Vector& y, const Vector& x) {
  const Vector gy = eval(g, y);
  Layer& last = g.layer(g.num_layers() - 1);
  detail::require_arg(last.activation == Activation::identity,
                      "make_consistent needs an identity output layer");
  last.bias += x - gy;
}

// ---------------------------------------------------------------------------
// Deviation bounds

struct DeviationCheckResult {
  double lhs = 0.0;
  double rhs = 0.0;
  double composition_defect = 0.0;  // ||GJ - I||_2
  double sigma_min = 0.0;
  double residual_norm = 0.0;
  double u_norm = 0.0;
  double r_par_norm = 0.0;
  double r_perp_norm = 0.0;
  double g_norm = 0.0;  // ||G||_2
  double orthogonality = 0.0;   // |<r_par, r_perp>|
  double pinv_perp_norm = 0.0;  // ||J^+ r_perp||
  bool holds = false;           // lhs <= rhs + 1e-10

  double margin() const { return rhs - lhs; }
};

inline constexpr double kBoundSlack = 1e-10;

/// Range-restricted bound with r = J u:
/// ||-a G r + a J^+ r|| <= a ||GJ - I||_2 ||r|| / sigma_min(J).
inline DeviationCheckResult check_deviation_bound(const Matrix& J, const Matrix& G, const Vector& u,
                                                  double alpha) {
  detail::require_shape(G.rows() == J.cols() && G.cols() == J.rows(), "G must be d_in x d_out");
  detail::require_shape(u.size() == J.cols(), "u must have length d_in");
  DeviationCheckResult res;
  const Matrix pinv = pseudo_inverse(J);
  const Vector r = J * u;
  const Matrix defect = G * J - Matrix::Identity(J.cols(), J.cols());
  res.lhs = (-alpha * (G * r) + alpha * (pinv * r)).norm();
  res.composition_defect = spectral_norm(defect).value;
  res.sigma_min = smallest_singular_value(J).value;
  res.residual_norm = r.norm();
  res.u_norm = u.norm();
  res.r_par_norm = res.residual_norm;
  res.g_norm = spectral_norm(G).value;
  res.rhs = alpha * res.composition_defect * res.residual_norm / res.sigma_min;
  res.holds = res.lhs <= res.rhs + kBoundSlack;
  return res;
}

/// Arbitrary residual: split r = J J^+ r + r_perp and bound
/// ||-a G r + a J^+ r|| <= a ||GJ - I||_2 ||r_par|| / sigma_min + a ||G||_2 ||r_perp||.
inline DeviationCheckResult check_full_residual(const Matrix& J, const Matrix& G, const Vector& r,
                                                double alpha) {
  detail::require_shape(G.rows() == J.cols() && G.cols() == J.rows(), "G must be d_in x d_out");
  detail::require_shape(r.size() == J.rows(), "r must have length d_out");
  DeviationCheckResult res;
  const Matrix pinv = pseudo_inverse(J);
  const Vector r_par = J * (pinv * r);
  const Vector r_perp = r - r_par;
  const Matrix defect = G * J - Matrix::Identity(J.cols(), J.cols());
  res.lhs = (-alpha * (G * r) + alpha * (pinv * r)).norm();
  res.composition_defect = spectral_norm(defect).value;
  res.sigma_min = smallest_singular_value(J).value;
  res.g_norm = spectral_norm(G).value;
  res.residual_norm = r.norm();
  res.r_par_norm = r_par.norm();
  res.r_perp_norm = r_perp.norm();
  res.u_norm = (pinv * r).norm();
  res.orthogonality = std::abs(r_par.dot(r_perp));
  res.pinv_perp_norm = (pinv * r_perp).norm();
  res.rhs = alpha * res.composition_defect / res.sigma_min * res.r_par_norm +
            alpha * res.g_norm * res.r_perp_norm;
  res.holds = res.lhs <= res.rhs + kBoundSlack;
  return res;
}

// ---------------------------------------------------------------------------
// Hutchinson

struct HutchinsonResult {
  double estimate = 0.0;      // probe mean of ||A xi||^2
  double exact = 0.0;         // ||A||_F^2
  double spectral_sq = 0.0;   // ||A||_2^2
  bool spectral_le_frobenius = false;
};

inline HutchinsonResult check_hutchinson(const Matrix& a, int k, ProbeDistribution dist,
                                         std::uint64_t seed = 0) {
  detail::require_arg(k >= 1, "check_hutchinson: k must be >= 1");
  HutchinsonResult res;
  Rng rng = make_rng(seed);
  const Matrix probes = sample_probes(dist, k, a.cols(), rng);
  res.estimate = (a * probes).colwise().squaredNorm().mean();
  res.exact = a.squaredNorm();
  const double s = spectral_norm(a).value;
  res.spectral_sq = s * s;
  res.spectral_le_frobenius = res.spectral_sq <= res.exact * (1.0 + 1e-12) + 1e-300;
  return res;
}

// ---------------------------------------------------------------------------
// Randomized suites

/// J = U diag(s) V^T with s uniform in [s_lo, s_hi].
inline Matrix random_jacobian(Rng& rng, Eigen::Index d_out, Eigen::Index d_in, double s_lo = 0.1,
                              double s_hi = 3.0) {
  const Matrix u = random_orthonormal(rng, d_out, d_in);
  const Matrix v = random_orthonormal(rng, d_in, d_in);
  Vector s(d_in);
  for (Eigen::Index i = 0; i < d_in; ++i) s(i) = uniform(rng, s_lo, s_hi);
  return u * s.asDiagonal() * v.transpose();
}

struct SuiteReport {
  std::string suite;
  int trials = 0;
  int passed = 0;
  int failed = 0;
  int inapplicable = 0;
  double worst_margin = std::numeric_limits<double>::infinity();
  nlohmann::json extra = nlohmann::json::object();

  bool ok() const { return failed == 0 && trials > 0; }

  nlohmann::json to_json() const {
    nlohmann::json j{{"suite", suite},     {"trials", trials}, {"passed", passed},
                     {"failed", failed},   {"inapplicable", inapplicable},
                     {"worst_margin", std::isfinite(worst_margin) ? nlohmann::json(worst_margin) : nlohmann::json()}};
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    return j;
  }
};

namespace detail {

inline void tally(SuiteReport& rep, bool pass, double margin) {
  ++rep.trials;
  (pass ? rep.passed : rep.failed) += 1;
  rep.worst_margin = std::min(rep.worst_margin, margin);
}

/// Random small dimensions with d_out >= d_in.
inline std::pair<int, int> random_dims(Rng& rng) {
  const int d_in = uniform_int(rng, 2, 6);
  return {d_in, d_in + uniform_int(rng, 0, 4)};
}

}  // namespace detail

/// Range-restricted bound on random J (s in [0.1, 3]), G = J^+ + perturbation, r = J u.
inline SuiteReport run_thm2_suite(int trials, std::uint64_t seed) {
  SuiteReport rep{"thm2"};
  for (int i = 0; i < trials; ++i) {
    Rng rng = make_rng(seed, std::uint64_t(i));
    auto [d_in, d_out] = detail::random_dims(rng);
    const Matrix J = random_jacobian(rng, d_out, d_in);
    const double eps = std::pow(10.0, uniform(rng, -3.0, 0.0));
    const Matrix G = pseudo_inverse(J) + eps * gaussian_matrix(rng, d_in, d_out);
    const Vector u = gaussian_vector(rng, d_in);
    const double alpha = 1.0 - uniform(rng, 0.0, 1.0);  // (0, 1]
    const auto r = check_deviation_bound(J, G, u, alpha);
    detail::tally(rep, r.holds, r.margin());
  }
  return rep;
}

/// G = J^+ collapses the deviation to zero for residuals in Range(J).
inline SuiteReport run_cor1_suite(int trials, std::uint64_t seed) {
  SuiteReport rep{"cor1"};
  double worst = 0.0;
  for (int i = 0; i < trials; ++i) {
    Rng rng = make_rng(seed, std::uint64_t(i));
    auto [d_in, d_out] = detail::random_dims(rng);
    const Matrix J = random_jacobian(rng, d_out, d_in);
    const Vector u = gaussian_vector(rng, d_in);
    const double alpha = 1.0 - uniform(rng, 0.0, 1.0);
    const auto r = check_deviation_bound(J, pseudo_inverse(J), u, alpha);
    worst = std::max(worst, r.lhs);
    detail::tally(rep, r.lhs <= 1e-10, 1e-10 - r.lhs);
  }
  rep.extra["max_deviation"] = worst;
  return rep;
}

/// Arbitrary residuals; also checks the orthogonal split.
inline SuiteReport run_prop1_suite(int trials, std::uint64_t seed) {
  SuiteReport rep{"prop1"};
  double worst_split = 0.0;
  for (int i = 0; i < trials; ++i) {
    Rng rng = make_rng(seed, std::uint64_t(i));
    auto [d_in, d_out] = detail::random_dims(rng);
    const Matrix J = random_jacobian(rng, d_out, d_in);
    const double eps = std::pow(10.0, uniform(rng, -3.0, 0.0));
    const Matrix G = pseudo_inverse(J) + eps * gaussian_matrix(rng, d_in, d_out);
    const Vector r = gaussian_vector(rng, d_out);
    const double alpha = 1.0 - uniform(rng, 0.0, 1.0);
    const auto res = check_full_residual(J, G, r, alpha);
    const double split = std::abs(res.r_par_norm * res.r_par_norm + res.r_perp_norm * res.r_perp_norm -
                                  res.residual_norm * res.residual_norm) /
                         (res.residual_norm * res.residual_norm);
    worst_split = std::max(worst_split, split);
    const bool pass = res.holds && split <= 1e-10 && res.pinv_perp_norm <= 1e-10 * (1 + res.residual_norm);
    detail::tally(rep, pass, res.margin());
  }
  rep.extra["max_split_error"] = worst_split;
  return rep;
}

/// Hutchinson identity on random 4x4 matrices: exhaustive basis exact,
/// rademacher with 1e5 probes within 2%, spectral <= Frobenius.
inline SuiteReport run_lemma1_suite(int trials, std::uint64_t seed, int k = 100000) {
  SuiteReport rep{"lemma1"};
  double worst_basis = 0.0, worst_mc = 0.0;
  for (int i = 0; i < trials; ++i) {
    Rng rng = make_rng(seed, std::uint64_t(i));
    const Matrix a = gaussian_matrix(rng, 4, 4);
    const auto basis = check_hutchinson(a, 1, ProbeDistribution::exhaustive_basis);
    const auto mc = check_hutchinson(a, k, ProbeDistribution::rademacher, seed + std::uint64_t(i));
    const double basis_err = std::abs(basis.estimate * 4.0 - basis.exact) / basis.exact;
    const double mc_err = std::abs(mc.estimate - mc.exact) / mc.exact;
    worst_basis = std::max(worst_basis, basis_err);
    worst_mc = std::max(worst_mc, mc_err);
    const bool pass = basis_err <= 1e-12 && mc_err <= 0.02 && basis.spectral_le_frobenius;
    detail::tally(rep, pass, 0.02 - mc_err);
  }
  rep.extra["max_basis_rel_error"] = worst_basis;
  rep.extra["max_rademacher_rel_error"] = worst_mc;
  return rep;
}

/// Constructed pairs: f affine with a random full-rank J; g a tanh MLP made
/// consistent at (f(x), x). Nonlinear g must show slope in [1.9, 2.1] with
/// r^2 >= 0.99; an affine g must show zero deviation up to rounding.
inline SuiteReport run_thm1_suite(int trials, std::uint64_t seed) {
  SuiteReport rep{"thm1"};
  double min_slope = std::numeric_limits<double>::infinity(), max_slope = -min_slope;
  double min_r2 = 1.0, max_linear_dev = 0.0;
  const auto alphas = alpha_grid();
  for (int i = 0; i < trials; ++i) {
    Rng rng = make_rng(seed, std::uint64_t(i));
    auto [d_in, d_out] = detail::random_dims(rng);
    const DenseNet f = DenseNet::affine(random_jacobian(rng, d_out, d_in, 0.5, 2.0),
                                        gaussian_vector(rng, d_out) * 0.1);
    const Vector x = gaussian_vector(rng, d_in);
    const Vector y = eval(f, x);
    Vector r = gaussian_vector(rng, d_out);
    r *= 0.5 / r.norm();
    const Vector y_star = y - r;

    DenseNet g = DenseNet::random({d_out, 16, d_in}, Activation::tanh, Activation::identity, rng, 1.5);
    make_consistent(g, y, x);
    const SlopeFit fit = check_first_order(f, g, x, y_star, alphas);
    min_slope = std::min(min_slope, fit.fitted_slope);
    max_slope = std::max(max_slope, fit.fitted_slope);
    min_r2 = std::min(min_r2, fit.r_squared);

    DenseNet gl = DenseNet::affine(pseudo_inverse(f.layer(0).weight) + 0.1 * gaussian_matrix(rng, d_in, d_out));
    make_consistent(gl, y, x);
    const SlopeFit lin = check_first_order(f, gl, x, y_star, alphas);
    max_linear_dev = std::max(max_linear_dev, lin.max_deviation);

    const bool pass = fit.fitted_slope >= 1.9 && fit.fitted_slope <= 2.1 && fit.r_squared >= 0.99 &&
                      lin.max_deviation <= 1e-12;
    detail::tally(rep, pass, std::min(fit.fitted_slope - 1.9, 2.1 - fit.fitted_slope));
  }
  rep.extra["min_slope"] = min_slope;
  rep.extra["max_slope"] = max_slope;
  rep.extra["min_r_squared"] = min_r2;
  rep.extra["max_linear_deviation"] = max_linear_dev;
  return rep;
}

inline std::vector<SuiteReport> run_verify(const std::string& suite, int trials, std::uint64_t seed) {
  std::vector<SuiteReport> out;
  const bool all = suite == "all";
  if (all || suite == "thm1") out.push_back(run_thm1_suite(trials, seed));
  if (all || suite == "thm2") out.push_back(run_thm2_suite(trials, seed));
  if (all || suite == "cor1") out.push_back(run_cor1_suite(trials, seed));
  if (all || suite == "lemma1") out.push_back(run_lemma1_suite(std::min(trials, 20), seed));
  if (all || suite == "prop1") out.push_back(run_prop1_suite(trials, seed));
  if (out.empty()) throw ArgumentError("unknown verify suite '" + suite + "'");
  return out;
}

}  // namespace deceptron
