#include <gtest/gtest.h>

#include <filesystem>
#include <numbers>

#include "test_util.hpp"

using namespace deceptron;

namespace {

Vector sine_mode(int n, int k, double amp) {
  Vector v(n);
  for (int j = 0; j < n; ++j) v(j) = amp * std::sin(k * std::numbers::pi * (j + 1) / double(n + 1));
  return v;
}

}  // namespace

TEST(LinearProblem, SingularValuesAndForward) {
  const Problem p = linear_problem(5, 9, 3);
  ASSERT_TRUE(p.linear_map.has_value());
  const Matrix& a = *p.linear_map;
  EXPECT_NEAR(spectral_norm(a).value, 2.0, 1e-8);
  // sigma_min via power iteration on (A^T A)^{-1}.
  const Matrix inv = (a.transpose() * a).inverse();
  const double lam = spectral_norm(inv).value;
  EXPECT_NEAR(1.0 / std::sqrt(lam), 0.5, 1e-8);
  EXPECT_GE(smallest_singular_value(a).value, 0.5 - 1e-8);
  Rng rng = make_rng(1);
  const Vector x = gaussian_vector(rng, 5);
  EXPECT_LT((p.true_forward(x) - a * x).norm(), 1e-14);
  EXPECT_THROW(linear_problem(5, 4, 1), ArgumentError);
}

TEST(LinearProblem, IdentityMatrixGivesIdentityForward) {
  const Problem p = linear_problem_from_matrix(Matrix::Identity(4, 4));
  const Vector x = Vector::LinSpaced(4, -1, 2);
  EXPECT_EQ(p.true_forward(x), x);
}

TEST(Heat1d, ZeroFieldMapsToZero) {
  EXPECT_EQ(heat1d_forward(Vector::Zero(64), 0.05, 1.0).norm(), 0.0);
}

TEST(Heat1d, SingleModeDecaysAnalytically) {
  const int n = 64;
  for (int k : {1, 3, 8}) {
    const Vector x = sine_mode(n, k, 1.0);
    const Vector u = heat1d_semigroup(x, 0.05, 1.0);
    EXPECT_LT((u - std::exp(-0.05 * k * k) * x).norm(), 1e-12);
    // Small amplitude: tanh(gamma u) ~ gamma u to first order.
    const double a = 1e-6;
    const Vector y = heat1d_forward(sine_mode(n, k, a), 0.05, 1.0, 1.5);
    EXPECT_LT((y - 1.5 * a * std::exp(-0.05 * k * k) * x).norm(), 1e-15);
  }
}

TEST(Heat1d, SemigroupCompositionLaw) {
  Rng rng = make_rng(2);
  const Vector x = gaussian_vector(rng, 32);
  const Vector lhs = heat1d_semigroup(heat1d_semigroup(x, 0.05, 0.3), 0.05, 0.7);
  const Vector rhs = heat1d_semigroup(x, 0.05, 1.0);
  EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((heat1d_semigroup(x, 0.05, 0.0) - x).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Heat1d, RejectsNonPowerOfTwoGrid) {
  EXPECT_THROW(heat1d_forward(Vector::Zero(48), 0.05, 1.0), ArgumentError);
  Heat1dParams hp;
  hp.n = 100;
  EXPECT_THROW(heat1d_problem(hp), ArgumentError);
}

TEST(Heat2d, ConstantFieldIsInvariant) {
  const double c = 0.37;
  const Vector y = heat2d_forward(Matrix::Constant(16, 16, c), 10, 0.2, 1.0);
  EXPECT_LT((y.array() - (c + 0.3 * std::tanh(2 * c))).abs().maxCoeff(), 1e-14);
}

TEST(Heat2d, LinearStagePreservesMean) {
  Rng rng = make_rng(3);
  const Matrix u = gaussian_matrix(rng, 16, 16);
  const Matrix v = heat2d_linear_stage(u, 10, 0.2, 1.0);
  EXPECT_NEAR(v.mean(), u.mean(), 1e-12);
}

TEST(Heat2d, OneStepOnSpikeMatchesStencil) {
  Matrix u = Matrix::Zero(8, 8);
  u(0, 0) = 1.0;  // corner spike exercises the periodic wrap
  const Matrix v = heat2d_diffuse_step(u, 0.2);
  EXPECT_DOUBLE_EQ(v(0, 0), 1.0 - 4 * 0.2);
  EXPECT_DOUBLE_EQ(v(1, 0), 0.2);
  EXPECT_DOUBLE_EQ(v(7, 0), 0.2);
  EXPECT_DOUBLE_EQ(v(0, 1), 0.2);
  EXPECT_DOUBLE_EQ(v(0, 7), 0.2);
  EXPECT_DOUBLE_EQ(v.sum(), 1.0);
  EXPECT_EQ((v.array() != 0.0).count(), 5);
}

TEST(Heat2d, BlurMatchesExplicitKernel) {
  Matrix u = Matrix::Zero(16, 16);
  u(5, 9) = 1.0;
  const Matrix b = heat2d_linear_stage(u, 0, 0.2, 1.0);
  double z = 0.0;
  for (int i = -3; i <= 3; ++i) z += std::exp(-0.5 * i * i);
  for (int di = -3; di <= 3; ++di)
    for (int dj = -3; dj <= 3; ++dj)
      EXPECT_NEAR(b(5 + di, 9 + dj), std::exp(-0.5 * (di * di + dj * dj)) / (z * z), 1e-15);
  EXPECT_EQ(b(5, 13), 0.0);
}

TEST(Heat2d, RejectsUnstableStep) {
  EXPECT_THROW(heat2d_linear_stage(Matrix::Zero(4, 4), 1, 0.3, 1.0), ArgumentError);
}

TEST(Sampling, DeterministicAndBoxed) {
  const Problem p = heat2d_problem();
  EXPECT_EQ(sample_latent(p, 9), sample_latent(p, 9));
  EXPECT_NE(sample_latent(p, 9), sample_latent(p, 10));
  for (std::uint64_t s = 0; s < 200; ++s) EXPECT_TRUE(p.box->contains(sample_latent(p, s)));
}

TEST(Sampling, LatentMeansAreNearZero) {
  for (const std::string name : {"linear", "heat1d", "heat2d"}) {
    const Problem p = make_problem(name);
    Rng rng = make_rng(4);
    Vector sum = Vector::Zero(p.d_in);
    const int n = 10000;
    for (int i = 0; i < n; ++i) sum += p.latent_sampler(rng);
    EXPECT_LT((sum / n).cwiseAbs().maxCoeff(), 0.05) << name;
  }
}

TEST(Box, ProjectionAndNormalization) {
  const Box b = Box::uniform(3, -1.0, 2.0);
  Vector x(3);
  x << -5.0, 0.5, 9.0;
  Vector expect(3);
  expect << -1.0, 0.5, 2.0;
  EXPECT_EQ(b.project(x), expect);
  EXPECT_TRUE(b.contains(b.project(x)));
  Normalization n{Vector::Constant(3, 1.0), Vector::Constant(3, 2.0)};
  const Box nb = b.normalized(n);
  EXPECT_TRUE(nb.contains(n.apply(b.project(x))));
  EXPECT_DOUBLE_EQ(nb.lower(0), -1.0);
  EXPECT_DOUBLE_EQ(nb.upper(0), 0.5);
}

TEST(Datasets, NoiseFreeAndNormalized) {
  Problem p = heat1d_problem();
  p.noise_std = 0.0;
  const Dataset d = make_dataset(p, 64, 16, 8, 3);
  for (Eigen::Index i = 0; i < d.train.x.cols(); ++i)
    EXPECT_EQ(d.train.y.col(i), p.true_forward(d.train.x.col(i)));
  EXPECT_LT(d.train.yn.rowwise().mean().cwiseAbs().maxCoeff(), 1e-10);
  const Vector var = d.train.yn.rowwise().squaredNorm() / double(d.train.yn.cols());
  EXPECT_LT((var.array() - 1.0).abs().maxCoeff(), 1e-10);
  // Validation statistics are computed with the training transform only.
  EXPECT_GT(d.val.yn.rowwise().mean().cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((d.val.yn - d.y_norm.apply(d.val.y)).norm(), 1e-12);
}

TEST(Datasets, ReproducibleAndRoundTripThroughDisk) {
  const Problem p = make_problem("linear");
  const Dataset a = make_dataset(p, 20, 5, 5, 11), b = make_dataset(p, 20, 5, 5, 11);
  EXPECT_EQ(a.train.x, b.train.x);
  EXPECT_EQ(a.test.y, b.test.y);
  const auto dir = std::filesystem::temp_directory_path() / "deceptron_dataset_test";
  std::filesystem::remove_all(dir);
  save_dataset(a, dir);
  for (const char* f : {"meta.json", "train_x.csv", "train_y.csv", "val_x.csv", "val_y.csv", "test_x.csv", "test_y.csv"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  const Dataset c = load_dataset(dir);
  EXPECT_EQ(c.problem, "linear");
  EXPECT_LT((c.train.x - a.train.x).norm(), 1e-12);
  EXPECT_LT((c.val.yn - a.val.yn).norm(), 1e-10);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(make_dataset(p, 0, 1, 1, 0), ArgumentError);
  EXPECT_THROW(make_problem("darcy"), ConfigError);
}
