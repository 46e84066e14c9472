#pragma once

// Desk-scale inverse-problem families: analytic linear, Heat-1D with a tanh
// observation operator, and Heat-2D with blur and pointwise distortion.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deceptron/deceptron.hpp"
#include "deceptron/linalg.hpp"
#include "deceptron/rng.hpp"

namespace deceptron {

/// Componentwise bounds lower <= x <= upper.
struct Box {
  Vector lower;
  Vector upper;

  static Box uniform(Eigen::Index n, double lo, double hi) {
    return {Vector::Constant(n, lo), Vector::Constant(n, hi)};
  }

  Vector project(const Vector& x) const { return x.cwiseMax(lower).cwiseMin(upper); }

  bool contains(const Vector& x) const {
    return (x.array() >= lower.array()).all() && (x.array() <= upper.array()).all();
  }

  /// The same box expressed in normalized coordinates (std > 0 keeps ordering).
  Box normalized(const Normalization& n) const { return {n.apply(lower), n.apply(upper)}; }

  void validate(Eigen::Index dim) const {
    detail::require_shape(lower.size() == dim && upper.size() == dim, "box dimension mismatch");
    detail::require_arg((lower.array() <= upper.array()).all(), "box lower > upper");
  }
};

struct Problem {
  std::string name;
  int d_in = 0;
  int d_out = 0;
  std::function<Vector(Rng&)> latent_sampler;
  std::function<Vector(const Vector&)> true_forward;
  std::optional<Box> box;
  double rmse_success_threshold = 0.1;
  double basin_threshold = 0.1;
  double noise_std = 0.0;
  double gd_lr = 1.0;
  std::vector<int> hidden_widths;  // surrogate architecture for f and g
  double init_gain = 1.0;          // weight-init gain of the surrogates
  std::optional<Matrix> linear_map;  // set for the analytic linear family
};

/// Seeded draw from the problem's latent distribution.
inline Vector sample_latent(const Problem& p, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  return p.latent_sampler(rng);
}

// ---------------------------------------------------------------------------
// Linear

inline Problem linear_problem_from_matrix(Matrix a) {
  Problem p;
  p.name = "linear";
  p.d_in = int(a.cols());
  p.d_out = int(a.rows());
  const Eigen::Index d_in = a.cols();
  p.latent_sampler = [d_in](Rng& rng) { return gaussian_vector(rng, d_in); };
  p.true_forward = [a](const Vector& x) -> Vector {
    detail::require_shape(x.size() == a.cols(), "linear forward: wrong latent length");
    return a * x;
  };
  p.linear_map = std::move(a);
  p.rmse_success_threshold = 0.28;  // GD-final-RMSE 25th percentile, 200-instance pilot
  p.basin_threshold = 0.28;
  p.gd_lr = 4.0;
  p.hidden_widths = {};
  return p;
}

/// y = A x with A = U diag(s) V^T, singular values drawn in [0.5, 2].
inline Problem linear_problem(int d_in, int d_out, std::uint64_t seed) {
  detail::require_arg(d_in >= 1 && d_out >= d_in, "linear_problem requires d_out >= d_in >= 1");
  Rng rng = make_rng(seed);
  const Matrix u = random_orthonormal(rng, d_out, d_in);
  const Matrix v = random_orthonormal(rng, d_in, d_in);
  Vector s(d_in);
  for (int i = 0; i < d_in; ++i) s(i) = uniform(rng, 0.5, 2.0);
  s(0) = 2.0;
  s(d_in - 1) = 0.5;
  return linear_problem_from_matrix(u * s.asDiagonal() * v.transpose());
}

// ---------------------------------------------------------------------------
// Heat-1D

struct Heat1dParams {
  int n = 64;
  double nu = 0.05;
  double t_obs = 1.0;
  double gamma = 1.5;
};

namespace detail {

inline bool is_power_of_two(long n) { return n > 0 && (n & (n - 1)) == 0; }

/// Discrete sine basis: column k-1 is sin(k pi s_j), s_j = (j+1)/(n+1).
inline Matrix sine_basis(Eigen::Index n) {
  Matrix b(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index k = 0; k < n; ++k)
      b(j, k) = std::sin(double(k + 1) * std::numbers::pi * double(j + 1) / double(n + 1));
  return b;
}

}  // namespace detail

/// Heat semigroup S(t): sine-mode k decays by exp(-nu k^2 t).
inline Vector heat1d_semigroup(const Vector& x, double nu, double t) {
  detail::require_arg(detail::is_power_of_two(x.size()), "heat1d: grid size must be a power of two");
  detail::require_arg(nu > 0.0 && t >= 0.0, "heat1d: need nu > 0 and t >= 0");
  const Eigen::Index n = x.size();
  const Matrix basis = detail::sine_basis(n);
  Vector modes = (2.0 / double(n + 1)) * (basis.transpose() * x);
  for (Eigen::Index k = 0; k < n; ++k) modes(k) *= std::exp(-nu * double((k + 1) * (k + 1)) * t);
  return basis * modes;
}

inline Vector heat1d_forward(const Vector& x, double nu, double t_obs, double gamma = 1.5) {
  detail::require_arg(t_obs > 0.0, "heat1d: t_obs must be positive");
  return (gamma * heat1d_semigroup(x, nu, t_obs)).array().tanh().matrix();
}

inline Problem heat1d_problem(const Heat1dParams& hp = {}) {
  detail::require_arg(detail::is_power_of_two(hp.n), "heat1d: grid size must be a power of two");
  Problem p;
  p.name = "heat1d";
  p.d_in = p.d_out = hp.n;
  const int n = hp.n;
  p.latent_sampler = [n](Rng& rng) {
    // 3-6 distinct low-frequency modes (k <= 8) with U(-1,1) amplitudes.
    const int count = uniform_int(rng, 3, 6);
    std::vector<int> ks = {1, 2, 3, 4, 5, 6, 7, 8};
    std::shuffle(ks.begin(), ks.end(), rng);
    Vector x = Vector::Zero(n);
    for (int i = 0; i < count; ++i) {
      const double a = uniform(rng, -1.0, 1.0);
      for (int j = 0; j < n; ++j)
        x(j) += a * std::sin(double(ks[std::size_t(i)]) * std::numbers::pi * double(j + 1) /
                             double(n + 1));
    }
    return x;
  };
  p.true_forward = [hp](const Vector& x) { return heat1d_forward(x, hp.nu, hp.t_obs, hp.gamma); };
  p.noise_std = 0.01;
  p.rmse_success_threshold = 0.60;  // GD-final-RMSE 25th percentile, 200-instance pilot
  p.basin_threshold = 0.60;
  p.gd_lr = 16.0;
  p.hidden_widths = {128};
  return p;
}

// ---------------------------------------------------------------------------
// Heat-2D

struct Heat2dParams {
  int m = 16;
  int steps = 10;
  double kappa = 0.2;
  double blur_width = 1.0;
};

namespace detail {

// Periodic convolution along both axes with a normalized 1D Gaussian.
inline Matrix periodic_blur(const Matrix& u, double width) {
  if (width <= 0.0) return u;
  const int m = int(u.rows());
  const int radius = int(std::ceil(3.0 * width));
  std::vector<double> k(std::size_t(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[std::size_t(i + radius)] = std::exp(-0.5 * double(i * i) / (width * width));
    sum += k[std::size_t(i + radius)];
  }
  for (auto& v : k) v /= sum;
  auto wrap = [m](int i) { return ((i % m) + m) % m; };
  Matrix tmp = Matrix::Zero(m, m), out = Matrix::Zero(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      for (int o = -radius; o <= radius; ++o) tmp(i, j) += k[std::size_t(o + radius)] * u(wrap(i + o), j);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      for (int o = -radius; o <= radius; ++o) out(i, j) += k[std::size_t(o + radius)] * tmp(i, wrap(j + o));
  return out;
}

}  // namespace detail

/// One explicit 5-point diffusion step with periodic boundaries (dt = ds = 1).
inline Matrix heat2d_diffuse_step(const Matrix& u, double kappa) {
  const int m = int(u.rows());
  auto wrap = [m](int i) { return ((i % m) + m) % m; };
  Matrix next(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      next(i, j) = u(i, j) + kappa * (u(wrap(i + 1), j) + u(wrap(i - 1), j) + u(i, wrap(j + 1)) +
                                      u(i, wrap(j - 1)) - 4.0 * u(i, j));
  return next;
}

/// Linear stage: diffusion then blur. Mean preserving.
inline Matrix heat2d_linear_stage(const Matrix& field, int steps, double kappa, double blur_width) {
  detail::require_arg(field.rows() == field.cols() && field.rows() > 0, "heat2d: field must be square");
  detail::require_arg(kappa > 0.0 && kappa <= 0.25, "heat2d: kappa*dt/ds^2 must be in (0, 0.25]");
  detail::require_arg(steps >= 0, "heat2d: steps must be non-negative");
  Matrix u = field;
  for (int s = 0; s < steps; ++s) u = heat2d_diffuse_step(u, kappa);
  return detail::periodic_blur(u, blur_width);
}

/// Row-major flattening of the distorted observation y = u + 0.3 tanh(2u).
inline Vector heat2d_forward(const Matrix& field, int steps, double kappa, double blur_width) {
  const Matrix u = heat2d_linear_stage(field, steps, kappa, blur_width);
  const int m = int(u.rows());
  Vector y(Eigen::Index(m) * m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) y(i * m + j) = u(i, j) + 0.3 * std::tanh(2.0 * u(i, j));
  return y;
}

inline Matrix unflatten_field(const Vector& x, int m) {
  detail::require_shape(x.size() == Eigen::Index(m) * m, "field length is not m*m");
  Matrix f(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) f(i, j) = x(i * m + j);
  return f;
}

inline Problem heat2d_problem(const Heat2dParams& hp = {}) {
  Problem p;
  p.name = "heat2d";
  p.d_in = p.d_out = hp.m * hp.m;
  p.box = Box::uniform(p.d_in, -1.5, 1.5);
  const int m = hp.m;
  p.latent_sampler = [m](Rng& rng) {
    // 2-4 periodic Gaussian bumps with U(-1,1) amplitudes, clipped to [-1.5, 1.5].
    const int count = uniform_int(rng, 2, 4);
    Vector x = Vector::Zero(Eigen::Index(m) * m);
    for (int b = 0; b < count; ++b) {
      const double ci = uniform(rng, 0.0, m), cj = uniform(rng, 0.0, m);
      const double w = uniform(rng, 1.5, 3.5);
      const double a = uniform(rng, -1.0, 1.0);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
          double di = std::abs(i - ci), dj = std::abs(j - cj);
          di = std::min(di, m - di);
          dj = std::min(dj, m - dj);
          x(i * m + j) += a * std::exp(-0.5 * (di * di + dj * dj) / (w * w));
        }
    }
    return x.cwiseMax(-1.5).cwiseMin(1.5).eval();
  };
  p.true_forward = [hp](const Vector& x) {
    return heat2d_forward(unflatten_field(x, hp.m), hp.steps, hp.kappa, hp.blur_width);
  };
  p.noise_std = 0.01;
  p.rmse_success_threshold = 0.13;  // GD-final-RMSE 25th percentile, 200-instance pilot
  p.basin_threshold = 0.13;
  p.gd_lr = 64.0;
  p.hidden_widths = {256};
  // A small gain keeps untrained off-manifold Jacobian directions of f near
  // zero, so the composition penalty does not fight reconstruction.
  p.init_gain = 0.3;
  return p;
}

/// Registry: "linear", "heat1d", "heat2d".
inline Problem make_problem(const std::string& name) {
  if (name == "linear") return linear_problem(8, 12, 7);
  if (name == "heat1d") return heat1d_problem();
  if (name == "heat2d") return heat2d_problem();
  throw ConfigError("unknown problem '" + name + "'");
}

// ---------------------------------------------------------------------------
// Datasets

struct Split {
  Matrix x, y;    // raw, one sample per column
  Matrix xn, yn;  // normalized with training statistics
  Eigen::Index size() const { return x.cols(); }
};

struct Dataset {
  std::string problem;
  std::uint64_t seed = 0;
  double noise_std = 0.0;
  Split train, val, test;
  Normalization x_norm, y_norm;
};

/// Draws one (x, y) pair: latent sample, forward model, Gaussian noise.
inline std::pair<Vector, Vector> draw_instance(const Problem& p, Rng& rng) {
  Vector x = p.latent_sampler(rng);
  Vector y = p.true_forward(x);
  if (p.noise_std > 0.0)
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += p.noise_std * standard_normal(rng);
  return {std::move(x), std::move(y)};
}

inline Dataset make_dataset(const Problem& p, int n_train, int n_val, int n_test,
                            std::uint64_t seed) {
  detail::require_arg(n_train >= 1 && n_val >= 1 && n_test >= 1, "make_dataset: counts must be >= 1");
  Dataset d;
  d.problem = p.name;
  d.seed = seed;
  d.noise_std = p.noise_std;
  Rng rng = make_rng(seed);
  auto fill = [&](Split& s, int n) {
    s.x.resize(p.d_in, n);
    s.y.resize(p.d_out, n);
    for (int i = 0; i < n; ++i) {
      auto [x, y] = draw_instance(p, rng);
      s.x.col(i) = x;
      s.y.col(i) = y;
    }
  };
  fill(d.train, n_train);
  fill(d.val, n_val);
  fill(d.test, n_test);
  d.x_norm = Normalization::fit(d.train.x);
  d.y_norm = Normalization::fit(d.train.y);
  for (Split* s : {&d.train, &d.val, &d.test}) {
    s->xn = d.x_norm.apply(s->x);
    s->yn = d.y_norm.apply(s->y);
  }
  return d;
}

namespace detail {

inline void write_csv_matrix(const std::filesystem::path& path, const Matrix& samples) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.precision(17);
  for (Eigen::Index c = 0; c < samples.cols(); ++c) {
    for (Eigen::Index r = 0; r < samples.rows(); ++r) out << (r ? "," : "") << samples(r, c);
    out << '\n';
  }
}

inline Matrix read_csv_matrix(const std::filesystem::path& path, Eigen::Index rows) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::vector<std::vector<double>> cols;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    require_shape(Eigen::Index(v.size()) == rows, "csv row length mismatch in " + path.string());
    cols.push_back(std::move(v));
  }
  Matrix m(rows, Eigen::Index(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c)
    m.col(Eigen::Index(c)) = Eigen::Map<const Vector>(cols[c].data(), rows);
  return m;
}

}  // namespace detail

/// Directory layout: meta.json plus {train,val,test}_{x,y}.csv, one raw sample per row.
inline void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta{{"problem", d.problem},
                      {"seed", d.seed},
                      {"noise_std", d.noise_std},
                      {"d_in", d.train.x.rows()},
                      {"d_out", d.train.y.rows()},
                      {"n_train", d.train.size()},
                      {"n_val", d.val.size()},
                      {"n_test", d.test.size()},
                      {"x_norm", d.x_norm},
                      {"y_norm", d.y_norm}};
  std::ofstream(dir / "meta.json") << meta.dump(2);
  const std::pair<const char*, const Split*> splits[] = {
      {"train", &d.train}, {"val", &d.val}, {"test", &d.test}};
  for (const auto& [name, s] : splits) {
    detail::write_csv_matrix(dir / (std::string(name) + "_x.csv"), s->x);
    detail::write_csv_matrix(dir / (std::string(name) + "_y.csv"), s->y);
  }
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw ConfigError("missing " + (dir / "meta.json").string());
  const auto meta = nlohmann::json::parse(in);
  Dataset d;
  d.problem = meta.at("problem").get<std::string>();
  d.seed = meta.at("seed").get<std::uint64_t>();
  d.noise_std = meta.at("noise_std").get<double>();
  d.x_norm = meta.at("x_norm").get<Normalization>();
  d.y_norm = meta.at("y_norm").get<Normalization>();
  const auto d_in = meta.at("d_in").get<Eigen::Index>(), d_out = meta.at("d_out").get<Eigen::Index>();
  const std::pair<const char*, Split*> splits[] = {{"train", &d.train}, {"val", &d.val}, {"test", &d.test}};
  for (auto& [name, s] : splits) {
    s->x = detail::read_csv_matrix(dir / (std::string(name) + "_x.csv"), d_in);
    s->y = detail::read_csv_matrix(dir / (std::string(name) + "_y.csv"), d_out);
    s->xn = d.x_norm.apply(s->x);
    s->yn = d.y_norm.apply(s->y);
  }
  return d;
}

}  // namespace deceptron
