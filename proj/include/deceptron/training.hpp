#pragma once

// Losses, Adam with cosine annealing, and the three-stage protocol:
//   1. fit f on the task loss;
//   2. freeze f, pretrain g with reconstruction + cycle losses;
//   3. fork g and continue with and without the composition penalty.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "deceptron/deceptron.hpp"
#include "deceptron/problems.hpp"

namespace deceptron {

struct TrainConfig {
  std::array<int, 3> epochs{160, 120, 140};
  std::array<double, 3> lr{2e-3, 2e-3, 1e-3};
  double lambda_task = 1.0;
  double lambda_rec = 1.0;
  double lambda_cyc = 0.15;
  double lambda_jcp = 0.5;
  // Heat-1D stabilization. Neither term's exact form is published; these are
  // reconstructions: bias anchoring of g(f(.)) at the latent centroid and a
  // composition penalty along the top principal latent direction.
  double lambda_bias = 0.0;
  double lambda_comp = 0.0;
  double weight_decay = 1e-6;
  double grad_clip_norm = 5.0;
  int batch_size = 64;
  ProbeConfig probe{};
  std::uint64_t seed = 0;
  double guard_factor = 1.25;  // stage-3 checkpoint must keep val reconstruction within this factor

  void validate() const {
    for (double l : {lambda_task, lambda_rec, lambda_cyc, lambda_jcp, lambda_bias, lambda_comp})
      detail::require_arg(l >= 0.0, "TrainConfig: loss weights must be >= 0");
    for (double l : lr) detail::require_arg(l > 0.0, "TrainConfig: learning rates must be > 0");
    for (int e : epochs) detail::require_arg(e >= 0, "TrainConfig: epochs must be >= 0");
    detail::require_arg(grad_clip_norm > 0.0, "TrainConfig: grad_clip_norm must be > 0");
    detail::require_arg(weight_decay >= 0.0, "TrainConfig: weight_decay must be >= 0");
    detail::require_arg(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
    detail::require_arg(guard_factor >= 1.0, "TrainConfig: guard_factor must be >= 1");
  }
};

/// Published per-benchmark rows (weight decay 1e-6, task and reconstruction weights 1.0).
inline TrainConfig table5_config(const std::string& problem) {
  TrainConfig c;
  if (problem == "heat2d") {
    c.epochs = {160, 120, 140};
    c.lr = {2e-3, 2e-3, 1e-3};
    c.lambda_cyc = 0.15;
    c.lambda_jcp = 0.50;
  } else if (problem == "heat1d") {
    c.epochs = {140, 100, 120};
    c.lr = {2e-3, 2e-3, 1e-3};
    c.lambda_cyc = 0.25;
    c.lambda_jcp = 0.0;
    c.lambda_bias = 5e-4;
    c.lambda_comp = 1e-3;
  } else if (problem == "linear") {
    c.epochs = {150, 100, 100};
    c.lr = {5e-3, 5e-3, 2e-3};
    c.lambda_cyc = 0.15;
    c.lambda_jcp = 0.5;
  } else {
    throw ConfigError("no training configuration for problem '" + problem + "'");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  ParamSet m;
  ParamSet v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState like(const ParamSet& p) {
    AdamState s;
    s.m = p;
    s.m.scale(0.0);
    s.v = s.m;
    return s;
  }
};

struct AdamStepInfo {
  double grad_norm = 0.0;
  double clip_scale = 1.0;
};

/// Clip the global gradient norm, apply decoupled weight decay as
/// theta *= (1 - lr * wd), then the bias-corrected Adam update.
inline AdamStepInfo adam_step(ParamSet& params, ParamSet grads, AdamState& state, double lr,
                              double weight_decay, double clip_norm) {
  detail::require_shape(params.weights.size() == grads.weights.size() &&
                            state.m.weights.size() == params.weights.size(),
                        "adam_step: parameter/gradient/state shapes differ");
  if (!grads.all_finite()) throw NumericError("adam_step: non-finite gradient");
  AdamStepInfo info;
  info.grad_norm = std::sqrt(grads.squared_norm());
  if (clip_norm > 0.0 && info.grad_norm > clip_norm) {
    info.clip_scale = clip_norm / info.grad_norm;
    grads.scale(info.clip_scale);
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, double(state.step));
  const double shrink = 1.0 - lr * weight_decay;
  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    if (shrink != 1.0) p *= shrink;
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + state.eps);
  };
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    update(params.weights[l], grads.weights[l], state.m.weights[l], state.v.weights[l]);
    update(params.biases[l], grads.biases[l], state.m.biases[l], state.v.biases[l]);
  }
  return info;
}

/// eta * 0.5 * (1 + cos(pi * t / epochs)), t counted in epochs from 0.
inline double cosine_lr(double base, int epoch, int epochs) {
  if (epochs <= 0) return base;
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * double(epoch) / double(epochs)));
}

// ---------------------------------------------------------------------------
// Training loss

/// Fixed quantities for the Heat-1D stabilization terms.
struct Stabilization {
  Vector anchor;               // latent centroid (normalized coordinates)
  Vector principal_direction;  // unit vector
};

struct LossBreakdown {
  double total = 0.0;
  double task = 0.0;
  double rec = 0.0;
  double cyc = 0.0;
  double jcp = 0.0;
  double bias = 0.0;
  double comp = 0.0;
  double decay = 0.0;
  ParamSet grad_f;
  ParamSet grad_g;
};

/// lambda_task mean||f(x)-y||^2 + lambda_rec mean||g(f(x))-x||^2
/// + lambda_cyc mean||f(g(yt))-yt||^2 + lambda_jcp JCP + optional stabilization
/// + 0.5 wd (||W||^2 + ||V||^2), with exact gradients. Columns are samples;
/// `probes` are the JCP probes shared across the batch.
inline LossBreakdown training_loss(const DenseNet& f, const DenseNet& g, const Matrix& x,
                                   const Matrix& y, const Matrix& y_tilde, const TrainConfig& cfg,
                                   const Matrix& probes, const Stabilization* stab = nullptr) {
  detail::check_pair(f, g);
  if (x.cols() == 0) throw ArgumentError("training_loss: empty batch");
  detail::require_shape(x.rows() == f.input_dim() && y.rows() == f.output_dim() &&
                            x.cols() == y.cols(),
                        "training_loss: batch dimensions inconsistent with the model");
  LossBreakdown out;
  out.grad_f = ParamSet::zeros_like(f);
  out.grad_g = ParamSet::zeros_like(g);
  const double n = double(x.cols());

  const bool need_rec = cfg.lambda_rec > 0.0;
  if (cfg.lambda_task > 0.0 || need_rec) {
    ForwardCache cf;
    const Matrix fx = forward(f, x, &cf);
    Matrix fx_bar = Matrix::Zero(fx.rows(), fx.cols());
    if (cfg.lambda_task > 0.0) {
      const Matrix d = fx - y;
      out.task = d.squaredNorm() / n;
      fx_bar += (2.0 * cfg.lambda_task / n) * d;
    }
    if (need_rec) {
      ForwardCache cg;
      const Matrix d = forward(g, fx, &cg) - x;
      out.rec = d.squaredNorm() / n;
      fx_bar += backward(g, cg, (2.0 * cfg.lambda_rec / n) * d, &out.grad_g);
    }
    backward(f, cf, std::move(fx_bar), &out.grad_f);
  }
  if (cfg.lambda_cyc > 0.0) {
    detail::require_shape(y_tilde.rows() == f.output_dim() && y_tilde.cols() > 0,
                          "training_loss: cycle samples have wrong dimension");
    const double nt = double(y_tilde.cols());
    ForwardCache cg, cf;
    const Matrix gy = forward(g, y_tilde, &cg);
    const Matrix d = forward(f, gy, &cf) - y_tilde;
    out.cyc = d.squaredNorm() / nt;
    Matrix gy_bar = backward(f, cf, (2.0 * cfg.lambda_cyc / nt) * d, &out.grad_f);
    backward(g, cg, std::move(gy_bar), &out.grad_g);
  }
  if (cfg.lambda_jcp > 0.0) {
    auto [xs, ps] = detail::cross_pairs(x, probes);
    out.jcp = composition_defect_grad(f, g, xs, ps, cfg.lambda_jcp, &out.grad_f, &out.grad_g);
  }
  if (stab && cfg.lambda_bias > 0.0) {
    ForwardCache cf, cg;
    const Matrix a = stab->anchor;
    const Matrix d = forward(g, forward(f, a, &cf), &cg) - a;
    out.bias = d.squaredNorm();
    Matrix fa_bar = backward(g, cg, 2.0 * cfg.lambda_bias * d, &out.grad_g);
    backward(f, cf, std::move(fa_bar), &out.grad_f);
  }
  if (stab && cfg.lambda_comp > 0.0) {
    auto [xs, ps] = detail::cross_pairs(x, Matrix(stab->principal_direction));
    out.comp = composition_defect_grad(f, g, xs, ps, cfg.lambda_comp, &out.grad_f, &out.grad_g);
  }
  if (cfg.weight_decay > 0.0) {
    const ParamSet pf = f.params(), pg = g.params();
    out.decay = 0.5 * cfg.weight_decay * (pf.squared_norm() + pg.squared_norm());
    out.grad_f.add_scaled(cfg.weight_decay, pf);
    out.grad_g.add_scaled(cfg.weight_decay, pg);
  }
  out.total = cfg.lambda_task * out.task + cfg.lambda_rec * out.rec + cfg.lambda_cyc * out.cyc +
              cfg.lambda_jcp * out.jcp + cfg.lambda_bias * out.bias + cfg.lambda_comp * out.comp +
              out.decay;
  return out;
}

// ---------------------------------------------------------------------------
// Three-stage protocol

/// One row of the training history CSV.
struct HistoryRow {
  int epoch = 0;
  std::string stage;  // "1", "2", "3jcp", "3nojcp"
  double lr = 0.0;
  double total = 0.0, task = 0.0, rec = 0.0, cyc = 0.0, jcp = 0.0;
  double val_rmse = 0.0;  // stage 1: forward RMSE; later stages: reconstruction RMSE
  double val_rjcp = std::numeric_limits<double>::quiet_NaN();
};

struct Architecture {
  std::vector<int> hidden;  // widths shared by f and g
  Activation hidden_activation = Activation::tanh;
  double init_gain = 1.0;
};

struct TrainResult {
  Deceptron with_jcp;
  Deceptron without_jcp;
  std::vector<HistoryRow> history;
  DenseNet f_after_stage1;
  double stage_seconds[4] = {0, 0, 0, 0};  // s1, s2, s3(+JCP), s3(-JCP)
  double stage2_val_rec = 0.0;
  double stage2_val_rjcp = 0.0;
  double val_rjcp_with = 0.0;
  double val_rjcp_without = 0.0;
  int selected_epoch_with = -1;  // -1: stage-2 checkpoint kept
  int selected_epoch_without = -1;
};

/// Validation probe set used for RJCP during model selection and reporting.
inline Matrix validation_probes(const TrainConfig& cfg, Eigen::Index dim) {
  ProbeConfig p = cfg.probe;
  p.seed = cfg.seed ^ 0xa11ce5eedULL;
  return sample_probes(p, dim);
}

inline double mean_rjcp(const DenseNet& f, const DenseNet& g, const Matrix& x, const Matrix& probes) {
  auto [xs, ps] = detail::cross_pairs(x, probes);
  return composition_defect(f, g, xs, ps).mean();
}

inline double reconstruction_mse(const DenseNet& f, const DenseNet& g, const Matrix& x) {
  return (forward(g, forward(f, x)) - x).squaredNorm() / double(x.size());
}

namespace detail {

/// Top principal direction of the columns of x (power iteration on the covariance).
inline Vector principal_direction(const Matrix& x) {
  const Matrix c = x.colwise() - x.rowwise().mean();
  const Matrix cov = c * c.transpose() / double(x.cols());
  Vector v = power_start(cov.rows());
  for (int it = 0; it < 1000; ++it) {
    Vector w = cov * v;
    const double n = w.norm();
    if (n == 0.0) break;
    w /= n;
    if ((w - v).norm() < 1e-12) {
      v = w;
      break;
    }
    v = w;
  }
  return v;
}

enum class Trainable { f, g };

struct EpochStats {
  double total = 0, task = 0, rec = 0, cyc = 0, jcp = 0;
};

/// One pass over the training set updating only `which`.
inline EpochStats run_epoch(DenseNet& f, DenseNet& g, Trainable which, const Dataset& data,
                            const TrainConfig& loss_cfg, double lr, double weight_decay,
                            double clip, AdamState& adam, Rng& rng, const Stabilization* stab,
                            const std::string& stage, int epoch) {
  const Eigen::Index n = data.train.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  EpochStats st;
  int batches = 0;
  const bool need_probes = loss_cfg.lambda_jcp > 0.0;
  for (Eigen::Index start = 0; start < n; start += loss_cfg.batch_size) {
    const Eigen::Index b = std::min<Eigen::Index>(loss_cfg.batch_size, n - start);
    Matrix xb(data.train.xn.rows(), b), yb(data.train.yn.rows(), b);
    for (Eigen::Index i = 0; i < b; ++i) {
      xb.col(i) = data.train.xn.col(order[std::size_t(start + i)]);
      yb.col(i) = data.train.yn.col(order[std::size_t(start + i)]);
    }
    Matrix probes;
    if (need_probes)
      probes = sample_probes(loss_cfg.probe.distribution, loss_cfg.probe.count, xb.rows(), rng);
    LossBreakdown lb = training_loss(f, g, xb, yb, yb, loss_cfg, probes, stab);
    if (!std::isfinite(lb.total))
      throw NumericError("training diverged: non-finite loss in stage " + stage + ", epoch " +
                         std::to_string(epoch));
    DenseNet& net = which == Trainable::f ? f : g;
    ParamSet p = net.params();
    adam_step(p, which == Trainable::f ? std::move(lb.grad_f) : std::move(lb.grad_g), adam, lr,
              weight_decay, clip);
    net.set_params(p);
    st.total += lb.total;
    st.task += lb.task;
    st.rec += lb.rec;
    st.cyc += lb.cyc;
    st.jcp += lb.jcp;
    ++batches;
  }
  if (batches > 0) {
    const double k = 1.0 / batches;
    st.total *= k;
    st.task *= k;
    st.rec *= k;
    st.cyc *= k;
    st.jcp *= k;
  }
  return st;
}

}  // namespace detail

/// Stage-3 fork outcome after guarded model selection.
struct ForkResult {
  DenseNet g;
  int selected_epoch = -1;
  double val_rec = 0.0;
  double val_rjcp = 0.0;
};

inline TrainResult train_three_stage(const Dataset& data, const TrainConfig& cfg,
                                     const Architecture& arch) {
  cfg.validate();
  using clock = std::chrono::steady_clock;
  const int d_in = int(data.train.xn.rows()), d_out = int(data.train.yn.rows());
  Rng rng = make_rng(cfg.seed);

  std::vector<int> fdims{d_in}, gdims{d_out};
  for (int h : arch.hidden) fdims.push_back(h);
  for (auto it = arch.hidden.rbegin(); it != arch.hidden.rend(); ++it) gdims.push_back(*it);
  fdims.push_back(d_out);
  gdims.push_back(d_in);
  DenseNet f = DenseNet::random(fdims, arch.hidden_activation, Activation::identity, rng, arch.init_gain);
  DenseNet g = DenseNet::random(gdims, arch.hidden_activation, Activation::identity, rng, arch.init_gain);

  Stabilization stab{Vector::Zero(d_in), detail::principal_direction(data.train.xn)};
  stab.anchor = data.train.xn.rowwise().mean();
  const Stabilization* stab_ptr = (cfg.lambda_bias > 0.0 || cfg.lambda_comp > 0.0) ? &stab : nullptr;

  const Matrix val_probes = validation_probes(cfg, d_in);
  TrainResult res;

  // Stage-specific loss configurations. Weight decay is applied decoupled in
  // Adam, so it is removed from the loss itself.
  TrainConfig s1 = cfg;
  s1.lambda_rec = s1.lambda_cyc = s1.lambda_jcp = s1.lambda_bias = s1.lambda_comp = 0.0;
  s1.weight_decay = 0.0;
  TrainConfig s2 = cfg;
  s2.lambda_task = s2.lambda_jcp = s2.lambda_comp = 0.0;
  s2.weight_decay = 0.0;
  TrainConfig s3_with = cfg;
  s3_with.lambda_task = 0.0;
  s3_with.weight_decay = 0.0;
  TrainConfig s3_without = s3_with;
  s3_without.lambda_jcp = s3_without.lambda_comp = 0.0;

  // Stage 1
  auto t0 = clock::now();
  {
    ParamSet p = f.params();
    AdamState adam = AdamState::like(p);
    for (int e = 0; e < cfg.epochs[0]; ++e) {
      const double lr = cosine_lr(cfg.lr[0], e, cfg.epochs[0]);
      auto st = detail::run_epoch(f, g, detail::Trainable::f, data, s1, lr, cfg.weight_decay,
                                  cfg.grad_clip_norm, adam, rng, nullptr, "1", e);
      HistoryRow row{e, "1", lr, st.total, st.task, st.rec, st.cyc, st.jcp};
      row.val_rmse = std::sqrt((forward(f, data.val.xn) - data.val.yn).squaredNorm() /
                               double(data.val.yn.size()));
      res.history.push_back(row);
    }
  }
  res.stage_seconds[0] = std::chrono::duration<double>(clock::now() - t0).count();
  res.f_after_stage1 = f;

  // Stage 2: f frozen. The optimizer state is part of the checkpoint the
  // stage-3 forks resume from.
  t0 = clock::now();
  AdamState stage2_adam = AdamState::like(g.params());
  {
    AdamState& adam = stage2_adam;
    for (int e = 0; e < cfg.epochs[1]; ++e) {
      const double lr = cosine_lr(cfg.lr[1], e, cfg.epochs[1]);
      auto st = detail::run_epoch(f, g, detail::Trainable::g, data, s2, lr, cfg.weight_decay,
                                  cfg.grad_clip_norm, adam, rng, stab_ptr, "2", e);
      HistoryRow row{e, "2", lr, st.total, st.task, st.rec, st.cyc, st.jcp};
      row.val_rmse = std::sqrt(reconstruction_mse(f, g, data.val.xn));
      row.val_rjcp = mean_rjcp(f, g, data.val.xn, val_probes);
      res.history.push_back(row);
    }
  }
  res.stage_seconds[1] = std::chrono::duration<double>(clock::now() - t0).count();
  res.stage2_val_rec = reconstruction_mse(f, g, data.val.xn);
  res.stage2_val_rjcp = mean_rjcp(f, g, data.val.xn, val_probes);

  // Stage 3: two forks from the same stage-2 checkpoint, each with its own
  // generator forked from the shared stream so they see identical batches.
  const Rng fork_rng = rng;
  auto run_fork = [&](const TrainConfig& lc, const std::string& tag, double& seconds) {
    auto start = clock::now();
    Rng frng = fork_rng;
    DenseNet gf = g;
    ForkResult fr{g, -1, res.stage2_val_rec, res.stage2_val_rjcp};
    const double guard = cfg.guard_factor * res.stage2_val_rec;
    bool have = false;
    AdamState adam = stage2_adam;
    for (int e = 0; e < cfg.epochs[2]; ++e) {
      const double lr = cosine_lr(cfg.lr[2], e, cfg.epochs[2]);
      auto st = detail::run_epoch(f, gf, detail::Trainable::g, data, lc, lr, cfg.weight_decay,
                                  cfg.grad_clip_norm, adam, frng, stab_ptr, tag, e);
      HistoryRow row{e, tag, lr, st.total, st.task, st.rec, st.cyc, st.jcp};
      const double rec = reconstruction_mse(f, gf, data.val.xn);
      const double rj = mean_rjcp(f, gf, data.val.xn, val_probes);
      row.val_rmse = std::sqrt(rec);
      row.val_rjcp = rj;
      res.history.push_back(row);
      // Lowest reconstruction inside the guard; ties go to lower RJCP.
      if (rec <= guard &&
          (!have || rec < fr.val_rec || (rec == fr.val_rec && rj < fr.val_rjcp))) {
        fr = ForkResult{gf, e, rec, rj};
        have = true;
      }
    }
    seconds = std::chrono::duration<double>(clock::now() - start).count();
    return fr;
  };
  const ForkResult with = run_fork(s3_with, "3jcp", res.stage_seconds[2]);
  const ForkResult without = run_fork(s3_without, "3nojcp", res.stage_seconds[3]);

  auto make = [&](const DenseNet& gsel, bool jcp) {
    Deceptron d;
    d.f = f;
    d.g = gsel;
    d.x_norm = data.x_norm;
    d.y_norm = data.y_norm;
    d.meta = ModelMeta{data.problem, jcp, cfg.seed,
                       res.stage_seconds[0] + res.stage_seconds[1] + res.stage_seconds[2]};
    d.validate();
    return d;
  };
  res.with_jcp = make(with.g, true);
  res.without_jcp = make(without.g, false);
  res.selected_epoch_with = with.selected_epoch;
  res.selected_epoch_without = without.selected_epoch;
  res.val_rjcp_with = with.val_rjcp;
  res.val_rjcp_without = without.val_rjcp;
  return res;
}

inline void write_history_csv(const std::vector<HistoryRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out.precision(10);
  out << "epoch,stage,lr,loss_total,loss_task,loss_rec,loss_cyc,loss_jcp,val_rmse,val_rjcp\n";
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.stage << ',' << r.lr << ',' << r.total << ',' << r.task << ','
        << r.rec << ',' << r.cyc << ',' << r.jcp << ',' << r.val_rmse << ',';
    if (std::isfinite(r.val_rjcp)) out << r.val_rjcp;
    out << '\n';
  }
}

}  // namespace deceptron
