#pragma once

// Benchmark harness: matched instance sets across solvers, success criteria,
// Dolan-More and data profiles, effect sizes, reliability tables, break-even
// amortization, and the CSV/JSON writers behind `bench`.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deceptron/baselines.hpp"
#include "deceptron/dipg.hpp"

namespace deceptron {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct RunRecord {
  std::string problem;
  std::string method;
  std::uint64_t instance_seed = 0;
  bool solved_tol = false;
  bool solved_rmse = false;
  bool basin = false;
  std::optional<int> iters_to_tol;
  double wall_time_s = 0.0;
  std::optional<double> time_to_tol_s;
  double final_rmse = kNaN;
  double final_residual_ratio = 0.0;
  double min_rmse = kNaN;
  std::optional<double> mean_rjcp_final;
  std::optional<double> mean_cosine;
  int iterations = 0;  // completed outer iterations
  std::string terminated_by;
  int armijo_checked = 0;
  int armijo_violations = 0;
};

// ---------------------------------------------------------------------------
// Success criteria

struct SuccessChecks {
  bool solved_tol = false;
  bool solved_rmse = false;
  bool basin = false;
  std::optional<int> iters_to_tol;   // first t with ||r_t|| <= tol ||r_0||
  std::optional<double> time_to_tol_s;
  double min_residual_ratio = kInf;
  double min_rmse = kNaN;
};

inline SuccessChecks success_checks(const SolveTrace& trace, double r0, double rmse_threshold,
                                    double tol, double basin_threshold = kNaN) {
  detail::require_arg(!trace.records.empty(), "success_checks: empty trace");
  SuccessChecks s;
  for (const auto& rec : trace.records) {
    const double ratio = r0 > 0.0 ? rec.residual_norm / r0 : (rec.residual_norm > 0.0 ? kInf : 0.0);
    s.min_residual_ratio = std::min(s.min_residual_ratio, ratio);
    if (!s.iters_to_tol && residual_converged(rec.residual_norm, r0, tol)) {
      s.iters_to_tol = rec.t;
      s.time_to_tol_s = rec.wall_time_s;
    }
    if (std::isfinite(rec.rmse)) s.min_rmse = std::isfinite(s.min_rmse) ? std::min(s.min_rmse, rec.rmse) : rec.rmse;
  }
  s.solved_tol = s.iters_to_tol.has_value();
  const double final_rmse = trace.last().rmse;
  s.solved_rmse = std::isfinite(final_rmse) && final_rmse <= rmse_threshold;
  s.basin = std::isfinite(s.min_rmse) && std::isfinite(basin_threshold) && s.min_rmse < basin_threshold;
  return s;
}

// ---------------------------------------------------------------------------
// Profiles

struct ProfileCurve {
  std::string method;
  std::vector<double> grid;
  std::vector<double> fraction_solved;
};

enum class ProfileMetric { time, iters };

inline std::string to_string(ProfileMetric m) { return m == ProfileMetric::time ? "time" : "iters"; }

/// 1 plus 60 log-spaced points up to 1e3.
inline std::vector<double> default_tau_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 60; ++i) g.push_back(std::pow(10.0, 3.0 * i / 60.0));
  return g;
}

namespace detail {

using InstanceKey = std::pair<std::string, std::uint64_t>;

inline std::vector<std::string> methods_in_order(const std::vector<RunRecord>& records) {
  std::vector<std::string> out;
  for (const auto& r : records)
    if (std::find(out.begin(), out.end(), r.method) == out.end()) out.push_back(r.method);
  return out;
}

inline std::optional<double> metric_of(const RunRecord& r, ProfileMetric m) {
  if (!r.solved_tol) return std::nullopt;
  if (m == ProfileMetric::iters) return double(*r.iters_to_tol);
  return r.time_to_tol_s;
}

}  // namespace detail

/// Dolan-More performance profile. Instances nobody solved stay in the denominator.
inline std::vector<ProfileCurve> perf_profile(const std::vector<RunRecord>& records, ProfileMetric metric,
                                              const std::vector<double>& taus = default_tau_grid()) {
  const auto methods = detail::methods_in_order(records);
  std::set<detail::InstanceKey> instances;
  std::map<detail::InstanceKey, double> best;
  for (const auto& r : records) {
    const detail::InstanceKey key{r.problem, r.instance_seed};
    instances.insert(key);
    if (auto v = detail::metric_of(r, metric)) {
      auto it = best.find(key);
      if (it == best.end() || *v < it->second) best[key] = *v;
    }
  }
  std::vector<ProfileCurve> out;
  const double n = double(instances.size());
  for (const auto& m : methods) {
    std::vector<double> ratios;
    for (const auto& r : records) {
      if (r.method != m) continue;
      const auto v = detail::metric_of(r, metric);
      if (!v) continue;
      const double b = best.at({r.problem, r.instance_seed});
      ratios.push_back(*v == b ? 1.0 : (b > 0.0 ? *v / b : kInf));
    }
    ProfileCurve c{m, taus, {}};
    for (double tau : taus) {
      const auto hits = std::count_if(ratios.begin(), ratios.end(), [&](double q) { return q <= tau; });
      c.fraction_solved.push_back(n > 0 ? double(hits) / n : 0.0);
    }
    out.push_back(std::move(c));
  }
  return out;
}

/// Fraction of a method's instances solved within each absolute time budget.
inline std::vector<ProfileCurve> data_profile(const std::vector<RunRecord>& records,
                                              const std::vector<double>& budgets) {
  std::vector<ProfileCurve> out;
  for (const auto& m : detail::methods_in_order(records)) {
    std::vector<double> times;
    int total = 0;
    for (const auto& r : records) {
      if (r.method != m) continue;
      ++total;
      if (r.solved_tol && r.time_to_tol_s) times.push_back(*r.time_to_tol_s);
    }
    ProfileCurve c{m, budgets, {}};
    for (double b : budgets) {
      const auto hits = std::count_if(times.begin(), times.end(), [&](double t) { return t <= b; });
      c.fraction_solved.push_back(total > 0 ? double(hits) / total : 0.0);
    }
    out.push_back(std::move(c));
  }
  return out;
}

/// Log-spaced budgets 1e-4 .. 1e2 s.
inline std::vector<double> default_budget_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 60; ++i) g.push_back(std::pow(10.0, -4.0 + 6.0 * i / 60.0));
  return g;
}

// ---------------------------------------------------------------------------
// Statistics

inline double cohens_d(const std::vector<double>& a, const std::vector<double>& b) {
  detail::require_arg(a.size() >= 2 && b.size() >= 2, "cohens_d: each group needs >= 2 values");
  auto moments = [](const std::vector<double>& v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::pair{mean, ss / double(v.size() - 1)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double na = double(a.size()), nb = double(b.size());
  const double pooled = std::sqrt(((na - 1) * va + (nb - 1) * vb) / (na + nb - 2));
  if (!(pooled > 0.0)) throw UndefinedStatisticError("cohens_d: zero pooled variance");
  return (ma - mb) / pooled;
}

/// 1-based ranks with ties sharing their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

struct SpearmanResult {
  double rho = 0.0;
  int n = 0;
};

inline SpearmanResult spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  detail::require_arg(xs.size() == ys.size(), "spearman: length mismatch");
  detail::require_arg(xs.size() >= 3, "spearman: need n >= 3");
  const auto rx = average_ranks(xs), ry = average_ranks(ys);
  const double n = double(xs.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (!(sxx > 0.0 && syy > 0.0)) throw UndefinedStatisticError("spearman: constant input");
  return {sxy / std::sqrt(sxx * syy), int(xs.size())};
}

struct BreakEvenInput {
  double t_train = 0.0;  // seconds
  double c_base = 0.0;   // seconds per instance
  double c_dipg = 0.0;   // seconds per instance
};

inline double break_even(const BreakEvenInput& in) {
  if (!(in.c_base > in.c_dipg))
    throw InapplicableError("break_even requires C_base > C_dipg");
  return in.t_train / (in.c_base - in.c_dipg);
}

// ---------------------------------------------------------------------------
// Reliability

struct ReliabilityCell {
  std::string problem;
  std::string method;
  int runs = 0;  // 0 means absent
  double rmse_success_rate = kNaN;
  double mean_wall_time_s = kNaN;
  std::optional<double> mean_rjcp_final;
};

struct ReliabilityMarginal {
  std::string method;
  double mean_success_rate = kNaN;  // unweighted over problems with runs
  int problems_counted = 0;
  bool has_missing_cells = false;
};

struct ReliabilityTable {
  std::vector<ReliabilityCell> cells;
  std::vector<ReliabilityMarginal> marginals;
};

inline ReliabilityTable reliability_summary(const std::vector<RunRecord>& records) {
  std::vector<std::string> problems;
  for (const auto& r : records)
    if (std::find(problems.begin(), problems.end(), r.problem) == problems.end()) problems.push_back(r.problem);
  const auto methods = detail::methods_in_order(records);
  ReliabilityTable t;
  for (const auto& m : methods) {
    ReliabilityMarginal marg{m};
    double rate_sum = 0.0;
    for (const auto& p : problems) {
      ReliabilityCell cell;
      cell.problem = p;
      cell.method = m;
      int ok = 0, rjcp_n = 0;
      double time = 0.0, rjcp_sum = 0.0;
      for (const auto& r : records) {
        if (r.problem != p || r.method != m) continue;
        ++cell.runs;
        ok += r.solved_rmse ? 1 : 0;
        time += r.wall_time_s;
        if (r.mean_rjcp_final) {
          rjcp_sum += *r.mean_rjcp_final;
          ++rjcp_n;
        }
      }
      if (cell.runs > 0) {
        cell.rmse_success_rate = double(ok) / cell.runs;
        cell.mean_wall_time_s = time / cell.runs;
        if (rjcp_n > 0) cell.mean_rjcp_final = rjcp_sum / rjcp_n;
        rate_sum += cell.rmse_success_rate;
        ++marg.problems_counted;
      } else {
        marg.has_missing_cells = true;
      }
      t.cells.push_back(std::move(cell));
    }
    if (marg.problems_counted > 0) marg.mean_success_rate = rate_sum / marg.problems_counted;
    t.marginals.push_back(std::move(marg));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Suite execution

/// Method names understood by run_suite.
inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> m{"dipg+jcp", "dipg-jcp", "gd", "gn", "lm", "lbfgs"};
  return m;
}

inline std::vector<std::string> parse_methods(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (std::find(known_methods().begin(), known_methods().end(), item) == known_methods().end())
      throw ArgumentError("unknown method '" + item + "'");
    out.push_back(item);
  }
  detail::require_arg(!out.empty(), "no methods given");
  return out;
}

struct SuiteConfig {
  DipgConfig dipg;        // box is filled from the problem
  BaselineConfig baseline;  // method, gd_lr and box are filled per run
  InitPolicy x0 = InitPolicy::zeros;
  std::optional<Deceptron> model_jcp;
  std::optional<Deceptron> model_nojcp;
  bool keep_traces = false;
};

struct SuiteResult {
  std::vector<RunRecord> records;
  std::vector<SolveTrace> traces;  // parallel to records when keep_traces
};

inline std::string model_file_name(const std::string& problem, bool jcp) {
  return problem + (jcp ? "_jcp.json" : "_nojcp.json");
}

/// Loads <dir>/<problem>_jcp.json and/or _nojcp.json as the methods require.
inline void load_suite_models(SuiteConfig& cfg, const std::filesystem::path& dir, const std::string& problem,
                              const std::vector<std::string>& methods) {
  auto needs = [&](const std::string& m) { return std::find(methods.begin(), methods.end(), m) != methods.end(); };
  const bool baselines = needs("gd") || needs("gn") || needs("lm") || needs("lbfgs");
  auto load = [&](bool jcp) {
    const auto path = dir / model_file_name(problem, jcp);
    if (!std::filesystem::exists(path)) throw ConfigError("missing model file " + path.string());
    return load_model(path.string());
  };
  if (needs("dipg+jcp") || baselines) cfg.model_jcp = load(true);
  if (needs("dipg-jcp")) cfg.model_nojcp = load(false);
}

namespace detail {

inline RunRecord make_record(const Problem& p, const std::string& method, std::uint64_t seed,
                             const SolveTrace& trace, double tol) {
  RunRecord rec;
  rec.problem = p.name;
  rec.method = method;
  rec.instance_seed = seed;
  const double r0 = trace.r0();
  const auto s = success_checks(trace, r0, p.rmse_success_threshold, tol, p.basin_threshold);
  rec.solved_tol = s.solved_tol;
  rec.solved_rmse = s.solved_rmse;
  rec.basin = s.basin;
  rec.iters_to_tol = s.iters_to_tol;
  rec.time_to_tol_s = s.time_to_tol_s;
  rec.wall_time_s = trace.total_time_s;
  rec.final_rmse = trace.last().rmse;
  rec.final_residual_ratio = r0 > 0.0 ? trace.last().residual_norm / r0 : 0.0;
  rec.min_rmse = s.min_rmse;
  if (std::isfinite(trace.last().rjcp)) rec.mean_rjcp_final = trace.last().rjcp;
  double cos_sum = 0.0;
  int cos_n = 0;
  for (const auto& r : trace.records)
    if (r.accepted) {
      cos_sum += r.cosine_neg_grad;
      ++cos_n;
    }
  if (cos_n > 0) rec.mean_cosine = cos_sum / cos_n;
  rec.iterations = trace.last().t;
  rec.terminated_by = to_string(trace.terminated_by);
  const auto audit = audit_armijo(trace);
  rec.armijo_checked = audit.checked;
  rec.armijo_violations = audit.violations;
  return rec;
}

}  // namespace detail

/// Instance i draws its latent and noise from seed base_seed + i; every method
/// sees the same (x_true, y*, x0 policy). Baselines run on the +JCP surrogate f.
inline SuiteResult run_suite(const Problem& p, const std::vector<std::string>& methods, int n_instances,
                             std::uint64_t base_seed, const SuiteConfig& cfg) {
  detail::require_arg(n_instances >= 1, "run_suite: need >= 1 instance");
  auto model_for = [&](const std::string& m) -> const Deceptron& {
    const auto& opt = m == "dipg-jcp" ? cfg.model_nojcp : cfg.model_jcp;
    if (!opt) throw ConfigError("no model loaded for method '" + m + "'");
    return *opt;
  };
  for (const auto& m : methods) (void)model_for(m);

  SuiteResult out;
  for (int i = 0; i < n_instances; ++i) {
    const std::uint64_t seed = base_seed + std::uint64_t(i);
    Rng rng = make_rng(seed);
    const auto [x_true, y_raw] = draw_instance(p, rng);
    for (const auto& m : methods) {
      const Deceptron& dec = model_for(m);
      const Vector y_star = dec.y_norm.apply(y_raw);
      std::optional<Box> box;
      if (p.box) box = p.box->normalized(dec.x_norm);
      const Vector x0 = initial_point(dec, y_star, cfg.x0, box);
      SolveTrace trace;
      if (m == "dipg+jcp" || m == "dipg-jcp") {
        DipgConfig dc = cfg.dipg;
        dc.box = box;
        dc.rjcp_probes.seed = seed;
        trace = solve(dec, y_star, x0, dc, x_true, m);
      } else {
        BaselineConfig bc = cfg.baseline;
        bc.method = baseline_method_from_string(m);
        bc.gd_lr = p.gd_lr;
        bc.box = box;
        trace = solve_baseline(dec, y_star, x0, bc, x_true);
      }
      const double tol = (m == "dipg+jcp" || m == "dipg-jcp") ? cfg.dipg.stop_rel_tol : cfg.baseline.stop_rel_tol;
      out.records.push_back(detail::make_record(p, m, seed, trace, tol));
      if (cfg.keep_traces) out.traces.push_back(std::move(trace));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Writers

namespace detail {

inline void put(std::ostream& o, double v) {
  if (std::isfinite(v)) o << v;
  else if (std::isinf(v)) o << (v > 0 ? "inf" : "-inf");
}

inline void put(std::ostream& o, const std::optional<double>& v) {
  if (v) put(o, *v);
}

/// FNV-1a, stable across platforms and runs.
inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream o;
  o << std::hex;
  o.width(16);
  o.fill('0');
  o << h;
  return o.str();
}

}  // namespace detail

/// Columns whose values depend on timing and are excluded from determinism checks.
inline const std::set<std::string>& timing_columns() {
  static const std::set<std::string> c{"wall_time_s", "time_to_tol_s", "mean_wall_time_s", "c_base", "c_dipg",
                                       "t_train", "n_break", "applicable"};
  return c;
}

/// Outputs whose every value is derived from wall-clock measurements.
inline const std::set<std::string>& timing_files() {
  static const std::set<std::string> f{"profiles_time.csv", "data_profile.csv"};
  return f;
}

inline void write_records_csv(const std::vector<RunRecord>& records, std::ostream& o) {
  o.precision(17);
  o << "problem,method,instance_seed,solved_tol,solved_rmse,basin,iters_to_tol,wall_time_s,time_to_tol_s,"
       "final_rmse,final_residual_ratio,min_rmse,mean_rjcp_final,mean_cosine,iterations,terminated_by,"
       "armijo_checked,armijo_violations\n";
  for (const auto& r : records) {
    o << r.problem << ',' << r.method << ',' << r.instance_seed << ',' << int(r.solved_tol) << ','
      << int(r.solved_rmse) << ',' << int(r.basin) << ',';
    if (r.iters_to_tol) o << *r.iters_to_tol;
    o << ',';
    detail::put(o, r.wall_time_s);
    o << ',';
    detail::put(o, r.time_to_tol_s);
    o << ',';
    detail::put(o, r.final_rmse);
    o << ',';
    detail::put(o, r.final_residual_ratio);
    o << ',';
    detail::put(o, r.min_rmse);
    o << ',';
    detail::put(o, r.mean_rjcp_final);
    o << ',';
    detail::put(o, r.mean_cosine);
    o << ',' << r.iterations << ',' << r.terminated_by << ',' << r.armijo_checked << ',' << r.armijo_violations
      << '\n';
  }
}

/// Long format: method,<grid_name>,fraction_solved.
inline void write_profile_csv(const std::vector<ProfileCurve>& curves, const std::string& grid_name,
                              std::ostream& o) {
  o.precision(17);
  o << "method," << grid_name << ",fraction_solved\n";
  for (const auto& c : curves)
    for (std::size_t i = 0; i < c.grid.size(); ++i) {
      o << c.method << ',';
      detail::put(o, c.grid[i]);
      o << ',' << c.fraction_solved[i] << '\n';
    }
}

inline void write_reliability_csv(const ReliabilityTable& t, std::ostream& o) {
  o.precision(17);
  o << "problem,method,runs,rmse_success_rate,mean_wall_time_s,mean_rjcp_final,missing\n";
  for (const auto& c : t.cells) {
    o << c.problem << ',' << c.method << ',' << c.runs << ',';
    detail::put(o, c.rmse_success_rate);
    o << ',';
    detail::put(o, c.mean_wall_time_s);
    o << ',';
    detail::put(o, c.mean_rjcp_final);
    o << ',' << int(c.runs == 0) << '\n';
  }
  for (const auto& m : t.marginals) {
    o << "ALL," << m.method << ',' << m.problems_counted << ',';
    detail::put(o, m.mean_success_rate);
    o << ",,," << int(m.has_missing_cells) << '\n';
  }
}

struct BreakEvenRow {
  std::string problem;
  std::string method;      // D-IPG variant
  std::string baseline;
  double t_train = 0.0;
  double c_base = 0.0;     // mean wall time per instance
  double c_dipg = 0.0;
  std::optional<double> n_break;  // absent when C_base <= C_dipg
};

/// Break-even of each D-IPG variant against each baseline, from mean wall times.
inline std::vector<BreakEvenRow> break_even_table(const std::vector<RunRecord>& records,
                                                  const std::map<std::string, double>& train_seconds) {
  std::map<std::pair<std::string, std::string>, std::pair<double, int>> mean;
  for (const auto& r : records) {
    auto& [s, n] = mean[{r.problem, r.method}];
    s += r.wall_time_s;
    ++n;
  }
  std::vector<BreakEvenRow> rows;
  for (const auto& [key, dip] : mean) {
    const auto& [problem, method] = key;
    const auto tt = train_seconds.find(method);
    if (tt == train_seconds.end()) continue;
    for (const auto& [key2, base] : mean) {
      if (key2.first != problem || train_seconds.count(key2.second)) continue;
      BreakEvenRow row{problem, method, key2.second, tt->second, base.first / base.second, dip.first / dip.second, {}};
      if (row.c_base > row.c_dipg) row.n_break = break_even({row.t_train, row.c_base, row.c_dipg});
      rows.push_back(row);
    }
  }
  return rows;
}

inline void write_breakeven_csv(const std::vector<BreakEvenRow>& rows, std::ostream& o) {
  o.precision(17);
  o << "problem,method,baseline,t_train,c_base,c_dipg,n_break,applicable\n";
  for (const auto& r : rows) {
    o << r.problem << ',' << r.method << ',' << r.baseline << ',' << r.t_train << ',' << r.c_base << ','
      << r.c_dipg << ',';
    detail::put(o, r.n_break);
    o << ',' << int(r.n_break.has_value()) << '\n';
  }
}

inline std::string model_hash(const Deceptron& dec) {
  return detail::fnv1a_hex(nlohmann::json(dec).dump());
}

/// Writes records, profiles, reliability, break-even and the manifest into `dir`.
inline void write_bench_outputs(const std::filesystem::path& dir, const Problem& p,
                                const std::vector<std::string>& methods, int n_instances, std::uint64_t seed,
                                const SuiteConfig& cfg, const SuiteResult& res) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(dir / name);
    if (!f) throw ConfigError(std::string("cannot write ") + (dir / name).string());
    return f;
  };
  {
    auto f = open("records.csv");
    write_records_csv(res.records, f);
  }
  {
    auto f = open("profiles_time.csv");
    write_profile_csv(perf_profile(res.records, ProfileMetric::time), "tau", f);
  }
  {
    auto f = open("profiles_iters.csv");
    write_profile_csv(perf_profile(res.records, ProfileMetric::iters), "tau", f);
  }
  {
    auto f = open("data_profile.csv");
    write_profile_csv(data_profile(res.records, default_budget_grid()), "budget_s", f);
  }
  {
    auto f = open("reliability.csv");
    write_reliability_csv(reliability_summary(res.records), f);
  }
  std::map<std::string, double> train;
  if (cfg.model_jcp) train["dipg+jcp"] = cfg.model_jcp->meta.train_time_s;
  if (cfg.model_nojcp) train["dipg-jcp"] = cfg.model_nojcp->meta.train_time_s;
  for (auto it = train.begin(); it != train.end();)
    it = std::find(methods.begin(), methods.end(), it->first) == methods.end() ? train.erase(it) : std::next(it);
  {
    auto f = open("breakeven.csv");
    write_breakeven_csv(break_even_table(res.records, train), f);
  }

  nlohmann::json man;
  man["problem"] = p.name;
  man["methods"] = methods;
  man["instances"] = n_instances;
  man["seed"] = seed;
  man["x0"] = cfg.x0 == InitPolicy::warm ? "warm" : "zeros";
  man["problem_config"] = {{"d_in", p.d_in},
                           {"d_out", p.d_out},
                           {"rmse_success_threshold", p.rmse_success_threshold},
                           {"basin_threshold", p.basin_threshold},
                           {"noise_std", p.noise_std},
                           {"gd_lr", p.gd_lr}};
  const auto& d = cfg.dipg;
  man["dipg"] = {{"alpha0", d.alpha0}, {"rho", d.rho}, {"c", d.c}, {"beta", d.beta}, {"max_iters", d.max_iters},
                 {"backtrack_budget", d.backtrack_budget}, {"stop_rel_tol", d.stop_rel_tol},
                 {"require_strict_decrease", d.require_strict_decrease},
                 {"rjcp_probes", {{"distribution", to_string(d.rjcp_probes.distribution)}, {"count", d.rjcp_probes.count}}}};
  const auto& b = cfg.baseline;
  man["baseline"] = {{"max_iters", b.max_iters}, {"stop_rel_tol", b.stop_rel_tol}, {"cg_tol", b.cg_tol},
                     {"cg_max_iters", b.cg_max_iters}, {"lm_lambda0", b.lm_lambda0}, {"lm_up", b.lm_up},
                     {"lm_down", b.lm_down}, {"lbfgs_memory", b.lbfgs_memory}, {"gn_linesearch", b.gn_linesearch},
                     {"c", b.c}, {"beta", b.beta}, {"backtrack_budget", b.backtrack_budget}};
  nlohmann::json models = nlohmann::json::object();
  if (cfg.model_jcp) models["jcp"] = {{"hash", model_hash(*cfg.model_jcp)}, {"train_time_s", cfg.model_jcp->meta.train_time_s}};
  if (cfg.model_nojcp) models["nojcp"] = {{"hash", model_hash(*cfg.model_nojcp)}, {"train_time_s", cfg.model_nojcp->meta.train_time_s}};
  man["models"] = models;
  man["outputs"] = {"records.csv", "profiles_time.csv", "profiles_iters.csv", "data_profile.csv",
                    "reliability.csv", "breakeven.csv"};
  man["timing_columns"] = std::vector<std::string>(timing_columns().begin(), timing_columns().end());
  man["timing_files"] = std::vector<std::string>(timing_files().begin(), timing_files().end());
  auto f = open("run_manifest.json");
  f << man.dump(2) << '\n';
}

}  // namespace deceptron
