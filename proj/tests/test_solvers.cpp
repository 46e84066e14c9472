#include <gtest/gtest.h>

#include <deque>
#include <sstream>

#include "test_util.hpp"

using namespace deceptron;
using testutil::random_net;

namespace {

struct LinearCase {
  Matrix a;
  Deceptron dec;  // f = A, g = A^+
  Vector x_true;
  Vector y_star;
};

LinearCase linear_case(std::uint64_t seed, double noise = 0.0) {
  const Problem p = linear_problem(6, 10, seed);
  LinearCase c;
  c.a = *p.linear_map;
  c.dec = Deceptron::from_nets(DenseNet::affine(c.a), DenseNet::affine(pseudo_inverse(c.a)));
  Rng rng = make_rng(seed + 100);
  c.x_true = gaussian_vector(rng, 6);
  c.y_star = c.a * c.x_true + noise * gaussian_vector(rng, 10);
  return c;
}

/// A mildly nonlinear pair with g a noisy approximate inverse of f.
Deceptron nonlinear_pair(Rng& rng, int d_in, int d_out) {
  const Matrix a = random_jacobian(rng, d_out, d_in, 0.5, 2.0);
  Layer f1{a, Vector::Zero(d_out), Activation::tanh};
  Layer f2{Matrix::Identity(d_out, d_out), gaussian_vector(rng, d_out) * 0.05, Activation::identity};
  Layer g1{pseudo_inverse(a) + 0.05 * gaussian_matrix(rng, d_in, d_out), Vector::Zero(d_in), Activation::identity};
  return Deceptron::from_nets(DenseNet({f1, f2}), DenseNet({g1}));
}

bool phi_nonincreasing(const SolveTrace& t) {
  for (std::size_t i = 1; i < t.records.size(); ++i)
    if (t.records[i].phi > t.records[i - 1].phi) return false;
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// D-IPG

TEST(Dipg, UnitStepProposalUsesTargetExactly) {
  const LinearCase c = linear_case(1);
  DipgConfig cfg;
  const Vector x = Vector::Constant(6, 0.3);
  const Proposal p = propose(c.dec, x, c.y_star, 1.0, cfg);
  EXPECT_EQ(p.y_prop, c.y_star);
  EXPECT_LT((p.x_prop - eval(c.dec.g, c.y_star)).norm(), 1e-14);
  EXPECT_LT((p.x_tilde - (0.6 * x + 0.4 * p.x_prop)).norm(), 1e-14);
  EXPECT_LT((p.p - (p.x_tilde - x)).norm(), 1e-15);
  const Proposal half = propose(c.dec, x, c.y_star, 0.5, cfg);
  const Vector y = c.a * x;
  EXPECT_LT((half.y_prop - (y - 0.5 * (y - c.y_star))).norm(), 1e-14);
  EXPECT_THROW(propose(c.dec, x, c.y_star, 0.0, cfg), ArgumentError);
}

TEST(Dipg, ProposalIsProjectedOntoBox) {
  const LinearCase c = linear_case(2);
  DipgConfig cfg;
  cfg.rho = 1.0;
  cfg.box = Box::uniform(6, -0.1, 0.1);
  const Proposal p = propose(c.dec, Vector::Zero(6), c.y_star * 10.0, 1.0, cfg);
  EXPECT_TRUE(cfg.box->contains(p.x_tilde));
}

TEST(Dipg, ExactInverseSolvesLinearProblemInOneStep) {
  const LinearCase c = linear_case(3);
  DipgConfig cfg;
  cfg.alpha0 = 1.0;
  cfg.rho = 1.0;
  cfg.stop_rel_tol = 1e-10;
  const SolveTrace t = solve(c.dec, c.y_star, Vector::Zero(6), cfg, c.x_true);
  ASSERT_EQ(t.records.size(), 2u);
  EXPECT_TRUE(t.records[0].accepted);
  EXPECT_EQ(t.records[0].accepted_alpha, 1.0);
  EXPECT_LE(t.records[1].residual_norm / t.records[0].residual_norm, 1e-10);
  EXPECT_EQ(t.terminated_by, Termination::tolerance);
  EXPECT_LT(t.last().rmse, 1e-12);
}

TEST(Dipg, AcceptedStepsSatisfyArmijoAndDecrease) {
  Rng rng = make_rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Deceptron dec = nonlinear_pair(rng, 5, 8);
    const Vector y_star = eval(dec.f, 0.5 * gaussian_vector(rng, 5));
    DipgConfig cfg;
    cfg.stop_rel_tol = 1e-6;
    cfg.max_iters = 40;
    const SolveTrace t = solve(dec, y_star, Vector::Zero(5), cfg);
    EXPECT_TRUE(phi_nonincreasing(t));
    const ArmijoAudit a = audit_armijo(t);
    EXPECT_EQ(a.violations, 0);
    EXPECT_EQ(a.checked, t.accepted_steps() - (t.last().accepted ? 1 : 0));
    for (const auto& r : t.records) {
      EXPECT_LE(r.backtracks_used, cfg.backtrack_budget);
      if (r.accepted) {
        EXPECT_LT(r.dir_deriv, 0.0);
      }
      EXPECT_TRUE(std::isfinite(r.rjcp));
    }
  }
}

TEST(Dipg, AscentProposalsExhaustTheBudget) {
  LinearCase c = linear_case(5);
  c.dec.g = DenseNet::affine(-pseudo_inverse(c.a));
  DipgConfig cfg;
  const SolveTrace t = solve(c.dec, c.y_star, Vector::Zero(6), cfg);
  EXPECT_EQ(t.terminated_by, Termination::backtrack_exhausted);
  ASSERT_EQ(t.records.size(), 1u);
  EXPECT_EQ(t.records[0].backtracks_used, cfg.backtrack_budget);
  EXPECT_FALSE(t.records[0].accepted);
  EXPECT_EQ(t.final_x, Vector::Zero(6));
}

TEST(Dipg, StoppingRules) {
  const LinearCase c = linear_case(6);
  DipgConfig cfg;
  cfg.stop_rel_tol = 1.0;  // x0 already meets the tolerance
  SolveTrace t = solve(c.dec, c.y_star, Vector::Zero(6), cfg);
  EXPECT_EQ(t.terminated_by, Termination::tolerance);
  EXPECT_EQ(t.records.size(), 1u);
  cfg.stop_rel_tol = 0.0;
  cfg.max_iters = 0;
  t = solve(c.dec, c.y_star, Vector::Zero(6), cfg);
  EXPECT_EQ(t.terminated_by, Termination::max_iters);
  EXPECT_EQ(t.records.size(), 1u);
  cfg.max_iters = 3;
  t = solve(c.dec, c.y_star, Vector::Zero(6), cfg);
  EXPECT_LE(t.records.size(), 4u);
}

TEST(Dipg, IteratesStayInBox) {
  Rng rng = make_rng(7);
  const Deceptron dec = nonlinear_pair(rng, 4, 6);
  DipgConfig cfg;
  cfg.box = Box::uniform(4, -0.2, 0.2);
  cfg.stop_rel_tol = 1e-8;
  const SolveTrace t = solve(dec, eval(dec.f, Vector::Constant(4, 1.0)), Vector::Zero(4), cfg);
  EXPECT_TRUE(cfg.box->contains(t.final_x));
}

TEST(Dipg, ConfigValidation) {
  DipgConfig cfg;
  cfg.rho = 0.0;
  EXPECT_THROW(cfg.validate(3), ArgumentError);
  cfg = DipgConfig{};
  cfg.beta = 1.0;
  EXPECT_THROW(cfg.validate(3), ArgumentError);
  cfg = DipgConfig{};
  cfg.backtrack_budget = 0;
  EXPECT_THROW(cfg.validate(3), ArgumentError);
  cfg = DipgConfig{};
  cfg.box = Box::uniform(2, 0, 1);
  EXPECT_THROW(cfg.validate(3), ShapeError);
}

// ---------------------------------------------------------------------------
// CG and L-BFGS building blocks

TEST(Cg, MatchesDenseSolveOnNormalEquations) {
  Rng rng = make_rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const DenseNet f = random_net(rng, 5, 9, 2, 10);
    const Vector x = gaussian_vector(rng, 5), rhs = gaussian_vector(rng, 5);
    const Matrix j = jacobian_by_jvp(f, x);
    for (double lambda : {0.0, 0.3}) {
      const Matrix m = j.transpose() * j + lambda * Matrix::Identity(5, 5);
      if (lambda == 0.0 && smallest_singular_value(j).value < 1e-3) continue;
      const Vector dense = m.ldlt().solve(rhs);
      const CgResult cg = cg_normal(f, x, rhs, lambda, 1e-13, 200);
      EXPECT_LT((cg.x - dense).norm(), 1e-7 * std::max(1.0, dense.norm()));
      EXPECT_LT(cg.relative_residual, 1e-9);
      EXPECT_FALSE(cg.breakdown);
    }
  }
  const DenseNet net = random_net(rng, 3, 3);
  const Vector zeros = Vector::Zero(3);
  const CgResult zero = cg_normal(net, zeros, zeros, 0.0, 1e-8, 10);
  EXPECT_EQ(zero.x.norm(), 0.0);
  EXPECT_EQ(zero.iterations, 0);
}

TEST(Lbfgs, TwoLoopMatchesExplicitBfgsRecursion) {
  Rng rng = make_rng(9);
  const int n = 6;
  const Matrix spd = [&] {
    Matrix b = gaussian_matrix(rng, n, n);
    return Matrix(b * b.transpose() + Matrix::Identity(n, n));
  }();
  std::deque<CurvaturePair> mem;
  double gamma = 1.0;
  for (int k = 0; k < 4; ++k) {
    const Vector s = gaussian_vector(rng, n);
    ASSERT_TRUE(lbfgs_update(mem, 10, s, spd * s, gamma));
  }
  // Explicit H = V^T H V + rho s s^T, H0 = gamma I, oldest pair applied first.
  Matrix h = gamma * Matrix::Identity(n, n);
  for (const auto& p : mem) {
    const Matrix v = Matrix::Identity(n, n) - p.rho * p.y * p.s.transpose();
    h = v.transpose() * h * v + p.rho * p.s * p.s.transpose();
  }
  const Vector g = gaussian_vector(rng, n);
  EXPECT_LT((lbfgs_two_loop(g, mem, gamma) - h * g).norm(), 1e-10 * (h * g).norm());
  // Secant condition for the newest pair.
  EXPECT_LT((lbfgs_two_loop(mem.back().y, mem, gamma) - mem.back().s).norm(), 1e-10);
}

TEST(Lbfgs, UpdateSkipsNonPositiveCurvatureAndEvicts) {
  std::deque<CurvaturePair> mem;
  double gamma = 1.0;
  Vector s = Vector::Ones(3);
  EXPECT_FALSE(lbfgs_update(mem, 2, s, -s, gamma));
  EXPECT_FALSE(lbfgs_update(mem, 2, s, Vector::Zero(3), gamma));
  EXPECT_TRUE(mem.empty());
  for (int k = 1; k <= 3; ++k) EXPECT_TRUE(lbfgs_update(mem, 2, k * s, 2.0 * k * s, gamma));
  EXPECT_EQ(mem.size(), 2u);
  EXPECT_EQ(mem.front().s, 2.0 * s);
  EXPECT_DOUBLE_EQ(gamma, 0.5);
}

// ---------------------------------------------------------------------------
// Baselines

TEST(Baselines, GaussNewtonReachesLeastSquaresOptimumInOneStep) {
  for (std::uint64_t seed : {10u, 11u, 12u}) {
    const LinearCase c = linear_case(seed, 0.3);
    Rng rng = make_rng(seed);
    BaselineConfig cfg;
    cfg.method = BaselineMethod::gn;
    cfg.max_iters = 1;
    cfg.stop_rel_tol = 0.0;
    const Vector x0 = 3.0 * gaussian_vector(rng, 6);
    const SolveTrace t = solve_baseline(c.dec, c.y_star, x0, cfg, c.x_true);
    ASSERT_EQ(t.records.size(), 2u);
    EXPECT_TRUE(t.records[0].accepted);
    EXPECT_EQ(t.records[0].accepted_alpha, 1.0);
    const Vector r = c.a * t.final_x - c.y_star;
    EXPECT_LT((c.a.transpose() * r).norm() / (spectral_norm(c.a).value * r.norm()), 1e-8);
    const Vector ls = c.a.colPivHouseholderQr().solve(c.y_star);
    EXPECT_LT((t.final_x - ls).norm(), 1e-8);
  }
}

TEST(Baselines, GradientDescentTakesPlainSteps) {
  const LinearCase c = linear_case(13);
  BaselineConfig cfg;
  cfg.method = BaselineMethod::gd;
  cfg.gd_lr = 0.7;
  cfg.max_iters = 1;
  cfg.stop_rel_tol = 0.0;
  const Vector x0 = Vector::Constant(6, 0.2);
  const SolveTrace t = solve_baseline(c.dec, c.y_star, x0, cfg);
  const Vector grad = c.a.transpose() * (c.a * x0 - c.y_star) / 10.0;
  EXPECT_LT((t.final_x - (x0 - 0.7 * grad)).norm(), 1e-14);
  EXPECT_FALSE(t.armijo_safeguarded);
}

TEST(Baselines, SafeguardedMethodsPassTheAuditOnNonlinearProblems) {
  Rng rng = make_rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    const Deceptron dec = nonlinear_pair(rng, 5, 8);
    const Vector y_star = eval(dec.f, 0.7 * gaussian_vector(rng, 5)) + 0.05 * gaussian_vector(rng, 8);
    for (BaselineMethod m : {BaselineMethod::gn, BaselineMethod::lm, BaselineMethod::lbfgs}) {
      BaselineConfig cfg;
      cfg.method = m;
      cfg.stop_rel_tol = 1e-6;
      cfg.max_iters = 30;
      const SolveTrace t = solve_baseline(dec, y_star, Vector::Zero(5), cfg);
      EXPECT_TRUE(t.armijo_safeguarded);
      EXPECT_TRUE(phi_nonincreasing(t)) << to_string(m);
      EXPECT_EQ(audit_armijo(t).violations, 0) << to_string(m);
      EXPECT_LT(t.last().phi, t.records.front().phi) << to_string(m);
    }
  }
}

TEST(Baselines, LevenbergMarquardtAdaptsDamping) {
  const LinearCase c = linear_case(15, 0.1);
  BaselineConfig cfg;
  cfg.method = BaselineMethod::lm;
  cfg.stop_rel_tol = 0.0;
  cfg.max_iters = 3;
  const SolveTrace t = solve_baseline(c.dec, c.y_star, Vector::Zero(6), cfg);
  ASSERT_GE(t.records.size(), 2u);
  EXPECT_DOUBLE_EQ(t.records[0].damping, 1e-3);
  EXPECT_DOUBLE_EQ(t.records[1].damping, 1e-4);
  EXPECT_EQ(baseline_method_from_string("lbfgs"), BaselineMethod::lbfgs);
  EXPECT_THROW(baseline_method_from_string("bfgs"), ArgumentError);
}

TEST(Baselines, LbfgsConvergesOnLinearLeastSquares) {
  const LinearCase c = linear_case(16);
  BaselineConfig cfg;
  cfg.method = BaselineMethod::lbfgs;
  cfg.stop_rel_tol = 1e-6;
  cfg.max_iters = 200;
  const SolveTrace t = solve_baseline(c.dec, c.y_star, Vector::Zero(6), cfg, c.x_true);
  EXPECT_EQ(t.terminated_by, Termination::tolerance);
  EXPECT_LT(t.last().rmse, 1e-4);
}

TEST(Baselines, ConfigValidation) {
  BaselineConfig cfg;
  cfg.lm_up = 1.0;
  EXPECT_THROW(cfg.validate(2), ArgumentError);
  cfg = BaselineConfig{};
  cfg.lm_down = 1.0;
  EXPECT_THROW(cfg.validate(2), ArgumentError);
  cfg = BaselineConfig{};
  cfg.cg_tol = 0.0;
  EXPECT_THROW(cfg.validate(2), ArgumentError);
  cfg = BaselineConfig{};
  cfg.lbfgs_memory = 0;
  EXPECT_THROW(cfg.validate(2), ArgumentError);
}

// ---------------------------------------------------------------------------
// Traces

TEST(Trace, AuditFlagsTamperedRecords) {
  const LinearCase c = linear_case(17);
  DipgConfig cfg;
  cfg.stop_rel_tol = 1e-12;
  cfg.max_iters = 4;
  SolveTrace t = solve(c.dec, c.y_star, Vector::Zero(6), cfg);
  ASSERT_GE(t.records.size(), 3u);
  EXPECT_EQ(audit_armijo(t).violations, 0);
  t.records[1].phi = t.records[0].phi * 2.0;
  EXPECT_GE(audit_armijo(t).violations, 1);
}

TEST(Trace, CsvAndSummaryShapes) {
  const LinearCase c = linear_case(18);
  const SolveTrace t = solve(c.dec, c.y_star, Vector::Zero(6), DipgConfig{}, c.x_true);
  std::ostringstream out;
  write_trace_csv(t, out);
  std::istringstream in(out.str());
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header.rfind("t,residual_norm,phi,rmse,", 0), 0u);
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, t.records.size());
  const auto s = trace_summary(t);
  EXPECT_EQ(s.at("method"), "dipg");
  EXPECT_EQ(s.at("records").get<std::size_t>(), t.records.size());
  EXPECT_TRUE(s.contains("final_rmse"));
}

TEST(Trace, InitialPointPolicies) {
  const LinearCase c = linear_case(19);
  const Box box = Box::uniform(6, -0.5, 0.5);
  EXPECT_EQ(initial_point(c.dec, c.y_star, InitPolicy::zeros, box), Vector::Zero(6));
  const Vector warm = initial_point(c.dec, c.y_star, InitPolicy::warm, box);
  EXPECT_EQ(warm, box.project(eval(c.dec.g, c.y_star)));
  EXPECT_THROW(init_policy_from_string("random"), ArgumentError);
}
