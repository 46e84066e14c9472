#pragma once

// The learned bidirectional pair (f, g) with data normalization, Hutchinson
// probes, the Jacobian composition penalty and its runtime diagnostic.
//
// f and g act in normalized coordinates: f maps normalized latents to
// normalized observations and g maps back. Solvers work in the same
// coordinates and convert at the boundary through x_norm / y_norm.

#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "deceptron/diffnet.hpp"

namespace deceptron {

/// Per-coordinate affine standardization z = (v - mean) / std.
struct Normalization {
  Vector mean;
  Vector std;

  static Normalization identity(Eigen::Index n) {
    return {Vector::Zero(n), Vector::Ones(n)};
  }

  /// Population statistics of the columns of `samples`; zero spreads map to 1.
  static Normalization fit(const Matrix& samples) {
    detail::require_arg(samples.cols() > 0, "Normalization::fit: no samples");
    Normalization n;
    n.mean = samples.rowwise().mean();
    const Matrix centered = samples.colwise() - n.mean;
    n.std = (centered.rowwise().squaredNorm() / double(samples.cols())).cwiseSqrt();
    for (Eigen::Index i = 0; i < n.std.size(); ++i)
      if (!(n.std(i) > 1e-12)) n.std(i) = 1.0;
    return n;
  }

  Eigen::Index dim() const { return mean.size(); }

  Matrix apply(const Matrix& v) const {
    return ((v.colwise() - mean).array().colwise() / std.array()).matrix();
  }
  Vector apply(const Vector& v) const { return ((v - mean).array() / std.array()).matrix(); }
  Matrix invert(const Matrix& z) const {
    return ((z.array().colwise() * std.array()).matrix()).colwise() + mean;
  }
  Vector invert(const Vector& z) const { return (z.array() * std.array()).matrix() + mean; }
};

struct ModelMeta {
  std::string problem;
  bool jcp = false;
  std::uint64_t seed = 0;
  double train_time_s = 0.0;
};

struct Deceptron {
  DenseNet f;  // forward surrogate (W)
  DenseNet g;  // reverse map (V)
  Normalization x_norm;
  Normalization y_norm;
  ModelMeta meta;

  int latent_dim() const { return f.input_dim(); }
  int measurement_dim() const { return f.output_dim(); }

  void validate() const {
    f.validate();
    g.validate();
    detail::require_shape(f.output_dim() == g.input_dim() && g.output_dim() == f.input_dim(),
                          "Deceptron: f and g dimensions do not pair");
    detail::require_shape(x_norm.dim() == f.input_dim() && y_norm.dim() == f.output_dim(),
                          "Deceptron: normalization dimensions mismatch");
    detail::require_arg((x_norm.std.array() > 0).all() && (y_norm.std.array() > 0).all(),
                        "Deceptron: normalization std must be positive");
  }

  /// A pair with identity normalization.
  static Deceptron from_nets(DenseNet f, DenseNet g) {
    Deceptron d;
    d.x_norm = Normalization::identity(f.input_dim());
    d.y_norm = Normalization::identity(f.output_dim());
    d.f = std::move(f);
    d.g = std::move(g);
    d.validate();
    return d;
  }
};

// ---------------------------------------------------------------------------
// Probes

enum class ProbeDistribution { rademacher, gaussian, exhaustive_basis };

inline std::string to_string(ProbeDistribution d) {
  switch (d) {
    case ProbeDistribution::rademacher: return "rademacher";
    case ProbeDistribution::gaussian: return "gaussian";
    case ProbeDistribution::exhaustive_basis: return "exhaustive_basis";
  }
  return "rademacher";
}

inline ProbeDistribution probe_distribution_from_string(std::string_view s) {
  if (s == "rademacher") return ProbeDistribution::rademacher;
  if (s == "gaussian") return ProbeDistribution::gaussian;
  if (s == "exhaustive_basis" || s == "basis") return ProbeDistribution::exhaustive_basis;
  throw ArgumentError("unknown probe distribution '" + std::string(s) + "'");
}

struct ProbeConfig {
  ProbeDistribution distribution = ProbeDistribution::rademacher;
  int count = 4;  // ignored by exhaustive_basis
  std::uint64_t seed = 0;
};

/// Probes as columns. Draws from `rng`; exhaustive_basis returns the identity.
inline Matrix sample_probes(ProbeDistribution dist, int count, Eigen::Index dim, Rng& rng) {
  detail::require_arg(dim >= 1, "sample_probes: dim must be >= 1");
  switch (dist) {
    case ProbeDistribution::exhaustive_basis: return Matrix::Identity(dim, dim);
    case ProbeDistribution::gaussian:
      detail::require_arg(count >= 1, "sample_probes: count must be >= 1");
      return gaussian_matrix(rng, dim, count);
    case ProbeDistribution::rademacher: {
      detail::require_arg(count >= 1, "sample_probes: count must be >= 1");
      Matrix m(dim, count);
      for (Eigen::Index j = 0; j < count; ++j)
        for (Eigen::Index i = 0; i < dim; ++i) m(i, j) = (rng() & 1u) ? 1.0 : -1.0;
      return m;
    }
  }
  return {};
}

inline Matrix sample_probes(const ProbeConfig& cfg, Eigen::Index dim) {
  Rng rng = make_rng(cfg.seed);
  return sample_probes(cfg.distribution, cfg.count, dim, rng);
}

// ---------------------------------------------------------------------------
// JCP / RJCP

struct JcpResult {
  double loss = 0.0;
  ParamSet grad_f;
  ParamSet grad_g;
};

namespace detail {

/// Pair every column of x with every column of probes: (x_i, xi_j).
inline std::pair<Matrix, Matrix> cross_pairs(const Matrix& x, const Matrix& probes) {
  const Eigen::Index b = x.cols(), k = probes.cols();
  Matrix xs(x.rows(), b * k), ps(x.rows(), b * k);
  for (Eigen::Index i = 0; i < b; ++i)
    for (Eigen::Index j = 0; j < k; ++j) {
      xs.col(i * k + j) = x.col(i);
      ps.col(i * k + j) = probes.col(j);
    }
  return {std::move(xs), std::move(ps)};
}

}  // namespace detail

/// Mean over batch columns and probe columns of ||J_g(f(x)) J_f(x) xi - xi||^2,
/// with exact parameter gradients for f and g. The same probes are used for
/// every sample in the batch.
inline JcpResult jcp_loss(const DenseNet& f, const DenseNet& g, const Matrix& x_batch,
                          const Matrix& probes) {
  detail::check_pair(f, g);
  detail::require_shape(x_batch.rows() == f.input_dim(), "jcp_loss: x has wrong dimension");
  detail::require_shape(probes.rows() == f.input_dim(), "jcp_loss: probe has wrong dimension");
  detail::require_arg(x_batch.cols() > 0 && probes.cols() > 0, "jcp_loss: empty batch or probes");
  JcpResult out{0.0, ParamSet::zeros_like(f), ParamSet::zeros_like(g)};
  auto [xs, ps] = detail::cross_pairs(x_batch, probes);
  out.loss = composition_defect_grad(f, g, xs, ps, 1.0, &out.grad_f, &out.grad_g);
  return out;
}

inline JcpResult jcp_loss(const Deceptron& dec, const Matrix& x_batch, const ProbeConfig& probes) {
  return jcp_loss(dec.f, dec.g, x_batch, sample_probes(probes, dec.latent_dim()));
}

/// Probe mean of the composition defect at one point; no gradients.
inline double rjcp(const DenseNet& f, const DenseNet& g, const Vector& x, const Matrix& probes) {
  detail::require_shape(x.size() == f.input_dim(), "rjcp: x has wrong dimension");
  detail::require_shape(probes.rows() == f.input_dim(), "rjcp: probe has wrong dimension");
  return composition_defect(f, g, x.replicate(1, probes.cols()), probes).mean();
}

inline double rjcp(const Deceptron& dec, const Vector& x, const ProbeConfig& probes) {
  return rjcp(dec.f, dec.g, x, sample_probes(probes, dec.latent_dim()));
}

// ---------------------------------------------------------------------------
// JSON envelope {"f","g","x_norm","y_norm","meta"}

inline void to_json(nlohmann::json& j, const Normalization& n) {
  j = nlohmann::json{{"mean", std::vector<double>(n.mean.data(), n.mean.data() + n.mean.size())},
                     {"std", std::vector<double>(n.std.data(), n.std.data() + n.std.size())}};
}

inline void from_json(const nlohmann::json& j, Normalization& n) {
  const auto m = j.at("mean").get<std::vector<double>>();
  const auto s = j.at("std").get<std::vector<double>>();
  detail::require_shape(m.size() == s.size(), "normalization mean/std length mismatch");
  n.mean = Eigen::Map<const Vector>(m.data(), Eigen::Index(m.size()));
  n.std = Eigen::Map<const Vector>(s.data(), Eigen::Index(s.size()));
}

inline void to_json(nlohmann::json& j, const Deceptron& d) {
  j = nlohmann::json{{"f", d.f},
                     {"g", d.g},
                     {"x_norm", d.x_norm},
                     {"y_norm", d.y_norm},
                     {"meta",
                      {{"problem", d.meta.problem},
                       {"jcp", d.meta.jcp},
                       {"seed", d.meta.seed},
                       {"train_time_s", d.meta.train_time_s}}}};
}

inline void from_json(const nlohmann::json& j, Deceptron& d) {
  d.f = j.at("f").get<DenseNet>();
  d.g = j.at("g").get<DenseNet>();
  d.x_norm = j.at("x_norm").get<Normalization>();
  d.y_norm = j.at("y_norm").get<Normalization>();
  if (j.contains("meta")) {
    const auto& m = j.at("meta");
    d.meta.problem = m.value("problem", std::string{});
    d.meta.jcp = m.value("jcp", false);
    d.meta.seed = m.value("seed", std::uint64_t{0});
    d.meta.train_time_s = m.value("train_time_s", 0.0);
  }
  d.validate();
}

inline void save_model(const Deceptron& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write model file '" + path + "'");
  out << nlohmann::json(d).dump();
}

inline Deceptron load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model file '" + path + "'");
  return nlohmann::json::parse(in).get<Deceptron>();
}

}  // namespace deceptron
