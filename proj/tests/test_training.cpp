#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "test_util.hpp"

using namespace deceptron;
using testutil::random_net;

TEST(Adam, MatchesScalarReferenceUpdate) {
  Rng rng = make_rng(1);
  const DenseNet net = random_net(rng, 2, 2, 1);
  ParamSet p = net.params();
  AdamState st = AdamState::like(p);
  // Scalar oracle on the first weight.
  double theta = p.weights[0](0, 0), m = 0, v = 0;
  const double lr = 0.01, wd = 0.1;
  for (int step = 1; step <= 5; ++step) {
    ParamSet g = ParamSet::zeros_like(net);
    g.weights[0](0, 0) = 0.3 * step - 0.7;
    const double gr = g.weights[0](0, 0);
    adam_step(p, g, st, lr, wd, 1e9);
    m = 0.9 * m + 0.1 * gr;
    v = 0.999 * v + 0.001 * gr * gr;
    theta *= (1 - lr * wd);
    theta -= lr * (m / (1 - std::pow(0.9, step))) / (std::sqrt(v / (1 - std::pow(0.999, step))) + 1e-8);
    EXPECT_NEAR(p.weights[0](0, 0), theta, 1e-15);
  }
}

TEST(Adam, ClipsGlobalNormAndRejectsNonFinite) {
  Rng rng = make_rng(2);
  const DenseNet net = random_net(rng, 3, 3, 2);
  ParamSet p = net.params();
  AdamState st = AdamState::like(p);
  ParamSet g = net.params();
  g.scale(100.0);
  const double norm = std::sqrt(g.squared_norm());
  const AdamStepInfo info = adam_step(p, g, st, 1e-3, 0.0, 5.0);
  EXPECT_NEAR(info.grad_norm, norm, 1e-9 * norm);
  EXPECT_NEAR(info.clip_scale, 5.0 / norm, 1e-15);
  g.weights[0](0, 0) = std::nan("");
  EXPECT_THROW(adam_step(p, g, st, 1e-3, 0.0, 5.0), NumericError);
}

TEST(Schedule, CosineAnnealing) {
  EXPECT_DOUBLE_EQ(cosine_lr(2e-3, 0, 10), 2e-3);
  EXPECT_NEAR(cosine_lr(2e-3, 5, 10), 1e-3, 1e-18);
  EXPECT_NEAR(cosine_lr(1.0, 3, 12), 0.5 * (1 + std::cos(std::numbers::pi / 4)), 1e-15);
  for (int e = 1; e < 10; ++e) EXPECT_LT(cosine_lr(1.0, e, 10), cosine_lr(1.0, e - 1, 10));
}

TEST(TrainingLoss, TermsMatchDirectEvaluation) {
  Rng rng = make_rng(3);
  const DenseNet f = random_net(rng, 3, 4), g = random_net(rng, 4, 3);
  const Matrix x = gaussian_matrix(rng, 3, 6), y = gaussian_matrix(rng, 4, 6), yt = gaussian_matrix(rng, 4, 5);
  const Matrix probes = sample_probes(ProbeDistribution::rademacher, 2, 3, rng);
  TrainConfig cfg;
  cfg.lambda_task = 0.7;
  cfg.lambda_rec = 1.3;
  cfg.lambda_cyc = 0.2;
  cfg.lambda_jcp = 0.5;
  cfg.weight_decay = 1e-2;
  const LossBreakdown lb = training_loss(f, g, x, y, yt, cfg, probes);
  EXPECT_NEAR(lb.task, (forward(f, x) - y).squaredNorm() / 6.0, 1e-13);
  EXPECT_NEAR(lb.rec, (forward(g, forward(f, x)) - x).squaredNorm() / 6.0, 1e-13);
  EXPECT_NEAR(lb.cyc, (forward(f, forward(g, yt)) - yt).squaredNorm() / 5.0, 1e-13);
  EXPECT_NEAR(lb.jcp, jcp_loss(f, g, x, probes).loss, 1e-13);
  EXPECT_NEAR(lb.decay, 0.5e-2 * (f.params().squared_norm() + g.params().squared_norm()), 1e-13);
  EXPECT_NEAR(lb.total, 0.7 * lb.task + 1.3 * lb.rec + 0.2 * lb.cyc + 0.5 * lb.jcp + lb.decay, 1e-12);
}

TEST(TrainingLoss, GradientMatchesFiniteDifferencesIncludingStabilization) {
  Rng rng = make_rng(4);
  DenseNet f = random_net(rng, 3, 4, 2, 6), g = random_net(rng, 4, 3, 2, 6);
  const Matrix x = gaussian_matrix(rng, 3, 5), y = gaussian_matrix(rng, 4, 5);
  const Matrix probes = sample_probes(ProbeDistribution::gaussian, 2, 3, rng);
  TrainConfig cfg;
  cfg.lambda_cyc = 0.3;
  cfg.lambda_jcp = 0.4;
  cfg.lambda_bias = 0.2;
  cfg.lambda_comp = 0.1;
  cfg.weight_decay = 1e-3;
  Vector dir = gaussian_vector(rng, 3);
  const Stabilization stab{gaussian_vector(rng, 3), dir / dir.norm()};
  const LossBreakdown lb = training_loss(f, g, x, y, y, cfg, probes, &stab);
  auto loss = [&] { return training_loss(f, g, x, y, y, cfg, probes, &stab).total; };
  for (std::size_t l = 0; l < f.num_layers(); ++l)
    for (Eigen::Index i = 0; i < std::min<Eigen::Index>(3, f.layer(l).weight.size()); ++i) {
      double& p = f.layer(l).weight.data()[i];
      EXPECT_NEAR(lb.grad_f.weights[l].data()[i], testutil::central_diff(p, 1e-6, loss), 2e-6);
    }
  for (std::size_t l = 0; l < g.num_layers(); ++l) {
    double& b = g.layer(l).bias(0);
    EXPECT_NEAR(lb.grad_g.biases[l](0), testutil::central_diff(b, 1e-6, loss), 2e-6);
    double& w = g.layer(l).weight(0, 0);
    EXPECT_NEAR(lb.grad_g.weights[l](0, 0), testutil::central_diff(w, 1e-6, loss), 2e-6);
  }
}

TEST(TrainingLoss, RejectsMismatchedBatches) {
  Rng rng = make_rng(5);
  const DenseNet f = random_net(rng, 3, 4), g = random_net(rng, 4, 3);
  TrainConfig cfg;
  EXPECT_THROW(training_loss(f, g, Matrix(3, 0), Matrix(4, 0), Matrix(4, 0), cfg, Matrix::Identity(3, 3)),
               ArgumentError);
  EXPECT_THROW(training_loss(f, g, gaussian_matrix(rng, 3, 2), gaussian_matrix(rng, 4, 3),
                             gaussian_matrix(rng, 4, 3), cfg, Matrix::Identity(3, 3)),
               ShapeError);
}

TEST(TrainConfigTest, ValidationAndPublishedRows) {
  const TrainConfig h2 = table5_config("heat2d");
  EXPECT_EQ(h2.epochs[0], 160);
  EXPECT_EQ(h2.epochs[1], 120);
  EXPECT_EQ(h2.epochs[2], 140);
  EXPECT_DOUBLE_EQ(h2.lr[0], 2e-3);
  EXPECT_DOUBLE_EQ(h2.lr[2], 1e-3);
  EXPECT_DOUBLE_EQ(h2.lambda_cyc, 0.15);
  EXPECT_DOUBLE_EQ(h2.lambda_jcp, 0.5);
  EXPECT_DOUBLE_EQ(h2.weight_decay, 1e-6);
  EXPECT_DOUBLE_EQ(h2.grad_clip_norm, 5.0);
  EXPECT_EQ(h2.batch_size, 64);
  EXPECT_THROW(table5_config("heat9d"), ConfigError);
  TrainConfig bad;
  bad.lambda_jcp = -1;
  EXPECT_THROW(bad.validate(), ArgumentError);
}

namespace {

Dataset small_linear_dataset() {
  const Problem p = linear_problem(3, 5, 11);
  return make_dataset(p, 96, 32, 8, 21);
}

TrainConfig short_config() {
  TrainConfig c = table5_config("linear");
  c.epochs = {25, 20, 15};
  c.batch_size = 32;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(ThreeStage, IsDeterministicAndFreezesForwardAfterStageOne) {
  const Dataset data = small_linear_dataset();
  const TrainConfig cfg = short_config();
  const Architecture arch{{8}};
  const TrainResult a = train_three_stage(data, cfg, arch);
  const TrainResult b = train_three_stage(data, cfg, arch);
  EXPECT_TRUE(a.with_jcp.f == b.with_jcp.f);
  EXPECT_TRUE(a.with_jcp.g == b.with_jcp.g);
  EXPECT_TRUE(a.without_jcp.g == b.without_jcp.g);
  // f is trained in stage 1 only and shared by both forks.
  EXPECT_TRUE(a.with_jcp.f == a.f_after_stage1);
  EXPECT_TRUE(a.without_jcp.f == a.f_after_stage1);
  EXPECT_TRUE(a.with_jcp.meta.jcp);
  EXPECT_FALSE(a.without_jcp.meta.jcp);
  EXPECT_EQ(a.history.size(), std::size_t(25 + 20 + 15 + 15));
}

TEST(ThreeStage, SelectionRespectsReconstructionGuard) {
  const Dataset data = small_linear_dataset();
  const TrainConfig cfg = short_config();
  const TrainResult r = train_three_stage(data, cfg, Architecture{{8}});
  const double with_rec = reconstruction_mse(r.with_jcp.f, r.with_jcp.g, data.val.xn);
  const double without_rec = reconstruction_mse(r.without_jcp.f, r.without_jcp.g, data.val.xn);
  EXPECT_LE(with_rec, cfg.guard_factor * r.stage2_val_rec + 1e-15);
  EXPECT_LE(without_rec, cfg.guard_factor * r.stage2_val_rec + 1e-15);
  // The reported validation RJCP is that of the selected checkpoint.
  const Matrix probes = validation_probes(cfg, data.train.xn.rows());
  EXPECT_NEAR(mean_rjcp(r.with_jcp.f, r.with_jcp.g, data.val.xn, probes), r.val_rjcp_with, 1e-12);
}

TEST(ThreeStage, PenaltyLowersValidationRjcpOnLinearProblem) {
  const Dataset data = small_linear_dataset();
  const TrainResult r = train_three_stage(data, short_config(), Architecture{{8}});
  EXPECT_GE(r.selected_epoch_with, 0);
  EXPECT_LT(r.val_rjcp_with, r.stage2_val_rjcp);
  EXPECT_LT(r.val_rjcp_with, r.val_rjcp_without);
}

TEST(ThreeStage, ForksCoincideWhenPenaltyIsOff) {
  const Dataset data = small_linear_dataset();
  TrainConfig cfg = short_config();
  cfg.lambda_jcp = 0.0;
  const TrainResult r = train_three_stage(data, cfg, Architecture{{6}});
  EXPECT_TRUE(r.with_jcp.g == r.without_jcp.g);
}

TEST(ThreeStage, FitsTheLinearProblem) {
  const Dataset data = small_linear_dataset();
  TrainConfig cfg = short_config();
  cfg.epochs = {400, 300, 20};
  const TrainResult r = train_three_stage(data, cfg, Architecture{{}});
  const double fwd = (forward(r.with_jcp.f, data.val.xn) - data.val.yn).squaredNorm() / double(data.val.yn.size());
  EXPECT_LT(fwd, 1e-2);
  EXPECT_LT(reconstruction_mse(r.with_jcp.f, r.with_jcp.g, data.val.xn), 1e-2);
}
