// Command-line front end: train, solve, verify, bench, calibrate.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "deceptron/all.hpp"

namespace fs = std::filesystem;
using namespace deceptron;
using nlohmann::json;

namespace {

struct TrainOpts {
  std::string problem = "heat2d";
  std::string out = "models";
  std::string dataset_dir;
  int n_train = 1024;
  int n_val = 128;
  int n_test = 64;
  std::uint64_t seed = 0;
  std::vector<int> hidden;
  std::optional<double> init_gain;
  std::vector<int> epochs;
};

int cmd_train(const TrainOpts& o) {
  const Problem p = make_problem(o.problem);
  const Dataset data = make_dataset(p, o.n_train, o.n_val, o.n_test, o.seed);
  if (!o.dataset_dir.empty()) save_dataset(data, o.dataset_dir);
  TrainConfig cfg = table5_config(o.problem);
  cfg.seed = o.seed;
  if (!o.epochs.empty()) {
    if (o.epochs.size() != 3) throw ArgumentError("--epochs takes three values");
    std::copy(o.epochs.begin(), o.epochs.end(), cfg.epochs.begin());
  }
  Architecture arch{o.hidden.empty() ? p.hidden_widths : o.hidden};
  arch.init_gain = o.init_gain.value_or(p.init_gain);
  const TrainResult res = train_three_stage(data, cfg, arch);

  fs::create_directories(o.out);
  const fs::path dir(o.out);
  save_model(res.with_jcp, (dir / model_file_name(o.problem, true)).string());
  save_model(res.without_jcp, (dir / model_file_name(o.problem, false)).string());
  write_history_csv(res.history, (dir / (o.problem + "_history.csv")).string());
  json summary{{"problem", o.problem},
               {"seed", o.seed},
               {"n_train", o.n_train},
               {"n_val", o.n_val},
               {"hidden", arch.hidden},
               {"init_gain", arch.init_gain},
               {"epochs", cfg.epochs},
               {"stage_seconds", {res.stage_seconds[0], res.stage_seconds[1], res.stage_seconds[2], res.stage_seconds[3]}},
               {"stage2_val_rec", res.stage2_val_rec},
               {"stage2_val_rjcp", res.stage2_val_rjcp},
               {"val_rjcp_jcp", res.val_rjcp_with},
               {"val_rjcp_nojcp", res.val_rjcp_without},
               {"selected_epoch_jcp", res.selected_epoch_with},
               {"selected_epoch_nojcp", res.selected_epoch_without}};
  std::ofstream(dir / (o.problem + "_train_summary.json")) << summary.dump(2) << '\n';
  std::cout << summary.dump(2) << '\n';
  return 0;
}

struct SolveOpts {
  std::string model;
  std::string problem;
  std::uint64_t instance_seed = 0;
  std::string method = "dipg";
  double alpha0 = 1.0, rho = 0.4, c = 1e-4, beta = 0.5, tol = 0.30;
  int max_iters = 80, backtracks = 8;
  std::string x0 = "zeros";
  std::string gn_linesearch = "armijo";
  std::string trace_out = "trace.csv";
  std::string summary_out;
};

int cmd_solve(const SolveOpts& o) {
  const Problem p = make_problem(o.problem);
  const Deceptron dec = load_model(o.model);
  if (dec.latent_dim() != p.d_in || dec.measurement_dim() != p.d_out)
    throw ConfigError("model dimensions do not match problem '" + o.problem + "'");
  Rng rng = make_rng(o.instance_seed);
  const auto [x_true, y_raw] = draw_instance(p, rng);
  const Vector y_star = dec.y_norm.apply(y_raw);
  std::optional<Box> box;
  if (p.box) box = p.box->normalized(dec.x_norm);
  const Vector x0 = initial_point(dec, y_star, init_policy_from_string(o.x0), box);

  SolveTrace trace;
  if (o.method == "dipg") {
    DipgConfig cfg;
    cfg.alpha0 = o.alpha0;
    cfg.rho = o.rho;
    cfg.c = o.c;
    cfg.beta = o.beta;
    cfg.max_iters = o.max_iters;
    cfg.backtrack_budget = o.backtracks;
    cfg.stop_rel_tol = o.tol;
    cfg.box = box;
    cfg.rjcp_probes.seed = o.instance_seed;
    trace = solve(dec, y_star, x0, cfg, x_true);
  } else {
    BaselineConfig cfg;
    cfg.method = baseline_method_from_string(o.method);
    cfg.max_iters = o.max_iters;
    cfg.stop_rel_tol = o.tol;
    cfg.c = o.c;
    cfg.beta = o.beta;
    cfg.backtrack_budget = o.backtracks;
    cfg.gd_lr = p.gd_lr;
    cfg.gn_linesearch = o.gn_linesearch == "armijo";
    cfg.box = box;
    trace = solve_baseline(dec, y_star, x0, cfg, x_true);
  }

  {
    std::ofstream f(o.trace_out);
    if (!f) throw ConfigError("cannot write " + o.trace_out);
    write_trace_csv(trace, f);
  }
  json s = trace_summary(trace);
  s["problem"] = o.problem;
  s["instance_seed"] = o.instance_seed;
  const auto chk = success_checks(trace, trace.r0(), p.rmse_success_threshold, o.tol, p.basin_threshold);
  s["solved_tol"] = chk.solved_tol;
  s["solved_rmse"] = chk.solved_rmse;
  if (chk.iters_to_tol) s["iters_to_tol"] = *chk.iters_to_tol;
  const auto audit = audit_armijo(trace);
  s["armijo_checked"] = audit.checked;
  s["armijo_violations"] = audit.violations;
  s["trace_csv"] = o.trace_out;
  if (o.summary_out.empty()) std::cout << s.dump(2) << '\n';
  else std::ofstream(o.summary_out) << s.dump(2) << '\n';
  return 0;
}

int cmd_verify(const std::string& suite, int trials, std::uint64_t seed, const std::string& out) {
  const auto reports = run_verify(suite, trials, seed);
  json j{{"seed", seed}, {"suites", json::array()}};
  bool ok = true;
  for (const auto& r : reports) {
    j["suites"].push_back(r.to_json());
    ok = ok && r.ok();
  }
  j["all_passed"] = ok;
  if (out.empty()) std::cout << j.dump(2) << '\n';
  else std::ofstream(out) << j.dump(2) << '\n';
  return ok ? 0 : 1;
}

struct BenchOpts {
  std::string problem = "heat2d";
  std::string methods = "dipg+jcp,dipg-jcp,gd,gn,lm,lbfgs";
  int instances = 40;
  std::uint64_t seed = 1000;
  std::string out = "bench_out";
  std::string models = "models";
  std::string x0 = "zeros";
};

int cmd_bench(const BenchOpts& o) {
  const Problem p = make_problem(o.problem);
  const auto methods = parse_methods(o.methods);
  SuiteConfig cfg;
  cfg.x0 = init_policy_from_string(o.x0);
  load_suite_models(cfg, o.models, o.problem, methods);
  const SuiteResult res = run_suite(p, methods, o.instances, o.seed, cfg);
  write_bench_outputs(o.out, p, methods, o.instances, o.seed, cfg, res);

  json j = json::object();
  for (const auto& cell : reliability_summary(res.records).cells) {
    int tol = 0;
    for (const auto& r : res.records) tol += (r.method == cell.method && r.solved_tol) ? 1 : 0;
    j[cell.method] = {{"tol_success_rate", double(tol) / std::max(cell.runs, 1)},
                      {"rmse_success_rate", cell.rmse_success_rate},
                      {"mean_wall_time_s", cell.mean_wall_time_s}};
  }
  std::cout << j.dump(2) << '\n';
  return 0;
}

/// GD learning-rate grid and RMSE threshold (25th percentile of final GD RMSE).
int cmd_calibrate(const std::string& problem, const std::string& models, int instances, std::uint64_t seed) {
  const Problem base = make_problem(problem);
  SuiteConfig cfg;
  load_suite_models(cfg, models, problem, {"gd"});
  json grid = json::array();
  double best_lr = base.gd_lr, best_ratio = kInf;
  std::vector<double> best_rmse;
  for (double lr : {0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0}) {
    Problem p = base;
    p.gd_lr = lr;
    const auto res = run_suite(p, {"gd"}, instances, seed, cfg);
    std::vector<double> ratios, rmses;
    for (const auto& r : res.records) {
      ratios.push_back(std::isfinite(r.final_residual_ratio) ? r.final_residual_ratio : kInf);
      rmses.push_back(std::isfinite(r.final_rmse) ? r.final_rmse : kInf);
    }
    std::sort(ratios.begin(), ratios.end());
    const double med = ratios[ratios.size() / 2];
    grid.push_back({{"gd_lr", lr}, {"median_final_residual_ratio", med}});
    if (med < best_ratio) {
      best_ratio = med;
      best_lr = lr;
      best_rmse = rmses;
    }
  }
  std::sort(best_rmse.begin(), best_rmse.end());
  const double q25 = best_rmse[std::size_t(0.25 * double(best_rmse.size() - 1))];
  json j{{"problem", problem}, {"instances", instances}, {"seed", seed}, {"grid", grid},
         {"gd_lr", best_lr}, {"rmse_success_threshold_q25", q25}};
  std::cout << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deceptron toolkit: training, learned inverse solves, baselines, checks and benchmarks"};
  app.require_subcommand(1);

  TrainOpts to;
  auto* train = app.add_subcommand("train", "Three-stage training; writes +JCP/-JCP models and history");
  train->add_option("--problem", to.problem)->check(CLI::IsMember({"linear", "heat1d", "heat2d"}));
  train->add_option("--out", to.out, "Model output directory");
  train->add_option("--dataset-dir", to.dataset_dir, "Also save the generated dataset here");
  train->add_option("--n-train", to.n_train);
  train->add_option("--n-val", to.n_val);
  train->add_option("--n-test", to.n_test);
  train->add_option("--seed", to.seed);
  train->add_option("--hidden", to.hidden, "Hidden widths (default: problem config)")->delimiter(',');
  train->add_option("--init-gain", to.init_gain, "Weight-init gain (default: problem config)");
  train->add_option("--epochs", to.epochs, "Stage epochs S1,S2,S3")->delimiter(',');

  SolveOpts so;
  auto* solve_cmd = app.add_subcommand("solve", "Solve one instance; trace CSV plus JSON summary");
  solve_cmd->add_option("--model", so.model)->required();
  solve_cmd->add_option("--problem", so.problem)->required();
  solve_cmd->add_option("--instance-seed", so.instance_seed)->required();
  solve_cmd->add_option("--method", so.method)->check(CLI::IsMember({"dipg", "gd", "gn", "lm", "lbfgs"}));
  solve_cmd->add_option("--alpha0", so.alpha0);
  solve_cmd->add_option("--rho", so.rho);
  solve_cmd->add_option("--c", so.c);
  solve_cmd->add_option("--beta", so.beta);
  solve_cmd->add_option("--max-iters", so.max_iters);
  solve_cmd->add_option("--backtracks", so.backtracks);
  solve_cmd->add_option("--tol", so.tol);
  solve_cmd->add_option("--x0", so.x0)->check(CLI::IsMember({"warm", "zeros"}));
  solve_cmd->add_option("--gn-linesearch", so.gn_linesearch)->check(CLI::IsMember({"armijo", "none"}));
  solve_cmd->add_option("--trace-out", so.trace_out, "Trace CSV path");
  solve_cmd->add_option("--summary-out", so.summary_out, "Summary JSON path (default stdout)");

  std::string suite = "all", verify_out;
  int trials = 500;
  std::uint64_t verify_seed = 0;
  auto* verify = app.add_subcommand("verify", "Randomized checks of the local theory");
  verify->add_option("--suite", suite)->check(CLI::IsMember({"thm1", "thm2", "cor1", "lemma1", "prop1", "all"}));
  verify->add_option("--trials", trials);
  verify->add_option("--seed", verify_seed);
  verify->add_option("--out", verify_out, "Report path (default stdout)");

  BenchOpts bo;
  auto* bench = app.add_subcommand("bench", "Matched-instance benchmark with profiles and manifest");
  bench->add_option("--problem", bo.problem);
  bench->add_option("--methods", bo.methods);
  bench->add_option("--instances", bo.instances);
  bench->add_option("--seed", bo.seed);
  bench->add_option("--out", bo.out);
  bench->add_option("--models", bo.models, "Directory holding <problem>_jcp.json and <problem>_nojcp.json");
  bench->add_option("--x0", bo.x0)->check(CLI::IsMember({"warm", "zeros"}));

  std::string cal_problem = "heat2d", cal_models = "models";
  int cal_instances = 200;
  std::uint64_t cal_seed = 5000;
  auto* calibrate = app.add_subcommand("calibrate", "GD step-size grid and RMSE threshold quantile");
  calibrate->add_option("--problem", cal_problem);
  calibrate->add_option("--models", cal_models);
  calibrate->add_option("--instances", cal_instances);
  calibrate->add_option("--seed", cal_seed);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(to);
    if (*solve_cmd) return cmd_solve(so);
    if (*verify) return cmd_verify(suite, trials, verify_seed, verify_out);
    if (*bench) return cmd_bench(bo);
    if (*calibrate) return cmd_calibrate(cal_problem, cal_models, cal_instances, cal_seed);
  } catch (const deceptron::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
