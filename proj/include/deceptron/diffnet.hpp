#pragma once

// Dense-network engine: exact evaluation, forward-mode tangents (JVP),
// reverse-mode adjoints (VJP), and reverse differentiation through a
// tangent-augmented forward pass. Batched entry points take one sample per
// column.

#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "deceptron/errors.hpp"
#include "deceptron/linalg.hpp"
#include "deceptron/rng.hpp"

namespace deceptron {

enum class Activation { identity, tanh, softplus };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::softplus: return "softplus";
  }
  return "identity";
}

inline Activation activation_from_string(std::string_view s) {
  if (s == "identity" || s == "linear") return Activation::identity;
  if (s == "tanh") return Activation::tanh;
  if (s == "softplus") return Activation::softplus;
  throw ArgumentError("unknown activation '" + std::string(s) + "'");
}

namespace detail {

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

inline Matrix activate(Activation a, const Matrix& z) {
  switch (a) {
    case Activation::identity: return z;
    case Activation::tanh: return z.array().tanh().matrix();
    case Activation::softplus: return z.unaryExpr([](double v) { return softplus(v); });
  }
  return z;
}

inline Matrix activate_d1(Activation a, const Matrix& z) {
  switch (a) {
    case Activation::identity: return Matrix::Ones(z.rows(), z.cols());
    case Activation::tanh: {
      const Eigen::ArrayXXd t = z.array().tanh();
      return (1.0 - t * t).matrix();
    }
    case Activation::softplus: return z.unaryExpr([](double v) { return sigmoid(v); });
  }
  return z;
}

inline Matrix activate_d2(Activation a, const Matrix& z) {
  switch (a) {
    case Activation::identity: return Matrix::Zero(z.rows(), z.cols());
    case Activation::tanh: {
      const Eigen::ArrayXXd t = z.array().tanh();
      return (-2.0 * t * (1.0 - t * t)).matrix();
    }
    case Activation::softplus:
      return z.unaryExpr([](double v) {
        const double s = sigmoid(v);
        return s * (1.0 - s);
      });
  }
  return z;
}

}  // namespace detail

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::identity;
};

class DenseNet;

/// Parameter-shaped container: gradients, Adam moments, flat snapshots.
struct ParamSet {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  static ParamSet zeros_like(const DenseNet& net);

  double squared_norm() const {
    double s = 0.0;
    for (const auto& w : weights) s += w.squaredNorm();
    for (const auto& b : biases) s += b.squaredNorm();
    return s;
  }

  bool all_finite() const {
    for (const auto& w : weights)
      if (!w.allFinite()) return false;
    for (const auto& b : biases)
      if (!b.allFinite()) return false;
    return true;
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& w : weights) n += static_cast<std::size_t>(w.size());
    for (const auto& b : biases) n += static_cast<std::size_t>(b.size());
    return n;
  }

  ParamSet& scale(double s) {
    for (auto& w : weights) w *= s;
    for (auto& b : biases) b *= s;
    return *this;
  }

  /// this += s * other
  ParamSet& add_scaled(double s, const ParamSet& other) {
    detail::require_shape(other.weights.size() == weights.size(), "ParamSet layer count mismatch");
    for (std::size_t i = 0; i < weights.size(); ++i) {
      weights[i] += s * other.weights[i];
      biases[i] += s * other.biases[i];
    }
    return *this;
  }

  /// Visit every scalar as (ParamSet-local flat index, value&).
  template <class F>
  void for_each(F&& fn) {
    std::size_t k = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      for (Eigen::Index i = 0; i < weights[l].size(); ++i) fn(k++, weights[l].data()[i]);
      for (Eigen::Index i = 0; i < biases[l].size(); ++i) fn(k++, biases[l].data()[i]);
    }
  }
};

class DenseNet {
 public:
  DenseNet() = default;

  explicit DenseNet(std::vector<Layer> layers) : layers_(std::move(layers)) { validate(); }

  /// Gaussian init with std gain/sqrt(fan_in) and zero biases.
  /// dims = {input, hidden..., output}; hidden layers use `hidden`, the last uses `output`.
  static DenseNet random(const std::vector<int>& dims, Activation hidden, Activation output,
                         Rng& rng, double gain = 1.0) {
    detail::require_arg(dims.size() >= 2, "DenseNet::random needs at least input and output dims");
    std::vector<Layer> layers;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      detail::require_arg(dims[i] > 0 && dims[i + 1] > 0, "layer dims must be positive");
      Layer l;
      l.weight = gaussian_matrix(rng, dims[i + 1], dims[i]) * (gain / std::sqrt(double(dims[i])));
      l.bias = Vector::Zero(dims[i + 1]);
      l.activation = (i + 2 == dims.size()) ? output : hidden;
      layers.push_back(std::move(l));
    }
    return DenseNet(std::move(layers));
  }

  /// Single affine layer x -> W x + b.
  static DenseNet affine(Matrix w, Vector b) {
    return DenseNet({Layer{std::move(w), std::move(b), Activation::identity}});
  }

  static DenseNet affine(Matrix w) {
    Vector b = Vector::Zero(w.rows());
    return affine(std::move(w), std::move(b));
  }

  int input_dim() const { return layers_.empty() ? 0 : int(layers_.front().weight.cols()); }
  int output_dim() const { return layers_.empty() ? 0 : int(layers_.back().weight.rows()); }
  std::size_t num_layers() const { return layers_.size(); }

  const std::vector<Layer>& layers() const { return layers_; }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  Layer& layer(std::size_t i) { return layers_.at(i); }

  ParamSet params() const {
    ParamSet p;
    for (const auto& l : layers_) {
      p.weights.push_back(l.weight);
      p.biases.push_back(l.bias);
    }
    return p;
  }

  void set_params(const ParamSet& p) {
    detail::require_shape(p.weights.size() == layers_.size() && p.biases.size() == layers_.size(),
                          "ParamSet does not match network depth");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      detail::require_shape(p.weights[i].rows() == layers_[i].weight.rows() &&
                                p.weights[i].cols() == layers_[i].weight.cols() &&
                                p.biases[i].size() == layers_[i].bias.size(),
                            "ParamSet layer shape mismatch");
      layers_[i].weight = p.weights[i];
      layers_[i].bias = p.biases[i];
    }
  }

  void validate() const {
    detail::require_shape(!layers_.empty(), "DenseNet needs at least one layer");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      detail::require_shape(l.weight.rows() == l.bias.size(),
                            "layer " + std::to_string(i) + ": bias length != weight rows");
      if (i + 1 < layers_.size())
        detail::require_shape(l.weight.rows() == layers_[i + 1].weight.cols(),
                              "layer " + std::to_string(i) + " output does not chain into next");
      if (!l.weight.allFinite() || !l.bias.allFinite())
        throw NumericError("layer " + std::to_string(i) + " has non-finite parameters");
    }
  }

  bool operator==(const DenseNet& o) const {
    if (layers_.size() != o.layers_.size()) return false;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto &a = layers_[i], &b = o.layers_[i];
      if (a.activation != b.activation || a.weight.rows() != b.weight.rows() ||
          a.weight.cols() != b.weight.cols() || a.weight != b.weight || a.bias != b.bias)
        return false;
    }
    return true;
  }

 private:
  std::vector<Layer> layers_;
};

inline ParamSet ParamSet::zeros_like(const DenseNet& net) {
  ParamSet p;
  for (const auto& l : net.layers()) {
    p.weights.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
    p.biases.push_back(Vector::Zero(l.bias.size()));
  }
  return p;
}

/// Per-layer inputs and pre-activations of a primal forward pass.
struct ForwardCache {
  std::vector<Matrix> inputs;
  std::vector<Matrix> pre;
};

/// Primal and tangent state of a tangent-augmented forward pass.
struct TangentCache {
  std::vector<Matrix> inputs, pre;
  std::vector<Matrix> tangent_inputs, tangent_pre;
};

namespace detail {

inline void check_input(const DenseNet& net, const Matrix& x, const char* what) {
  require_shape(net.num_layers() > 0, "empty network");
  if (x.rows() != net.input_dim())
    throw ShapeError(std::string(what) + ": expected " + std::to_string(net.input_dim()) +
                     " rows, got " + std::to_string(x.rows()));
  if (!x.allFinite()) throw NumericError(std::string(what) + ": non-finite input");
}

inline void check_finite(const Matrix& m, std::size_t layer) {
  if (!m.allFinite())
    throw NumericError("non-finite activation at layer " + std::to_string(layer));
}

}  // namespace detail

/// Batched forward pass (columns are samples). Fills `cache` when given.
inline Matrix forward(const DenseNet& net, const Matrix& x, ForwardCache* cache = nullptr) {
  detail::check_input(net, x, "forward");
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  Matrix a = x;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto& layer = net.layer(l);
    Matrix z = layer.weight * a;
    z.colwise() += layer.bias;
    if (cache) {
      cache->inputs.push_back(std::move(a));
      cache->pre.push_back(z);
    }
    a = detail::activate(layer.activation, z);
    detail::check_finite(a, l);
  }
  return a;
}

/// Reverse sweep of a primal pass. Accumulates parameter gradients into `grads`
/// (when non-null) and returns the input adjoint.
inline Matrix backward(const DenseNet& net, const ForwardCache& cache, Matrix out_bar,
                       ParamSet* grads = nullptr) {
  for (std::size_t l = net.num_layers(); l-- > 0;) {
    const auto& layer = net.layer(l);
    const Matrix zbar =
        (out_bar.array() * detail::activate_d1(layer.activation, cache.pre[l]).array()).matrix();
    if (grads) {
      grads->weights[l].noalias() += zbar * cache.inputs[l].transpose();
      grads->biases[l] += zbar.rowwise().sum();
    }
    out_bar = layer.weight.transpose() * zbar;
  }
  return out_bar;
}

/// Forward pass carrying (primal, tangent) pairs: z = W a + b, zdot = W adot,
/// a' = s(z), adot' = s'(z) * zdot.
inline std::pair<Matrix, Matrix> tangent_forward(const DenseNet& net, const Matrix& x,
                                                 const Matrix& v, TangentCache* cache = nullptr) {
  detail::check_input(net, x, "tangent_forward");
  detail::require_shape(v.rows() == x.rows() && v.cols() == x.cols(),
                        "tangent_forward: tangent shape differs from primal");
  if (cache) *cache = TangentCache{};
  Matrix a = x, ad = v;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto& layer = net.layer(l);
    Matrix z = layer.weight * a;
    z.colwise() += layer.bias;
    Matrix zd = layer.weight * ad;
    Matrix next = detail::activate(layer.activation, z);
    Matrix nextd =
        (detail::activate_d1(layer.activation, z).array() * zd.array()).matrix();
    if (cache) {
      cache->inputs.push_back(std::move(a));
      cache->tangent_inputs.push_back(std::move(ad));
      cache->pre.push_back(std::move(z));
      cache->tangent_pre.push_back(std::move(zd));
    }
    a = std::move(next);
    ad = std::move(nextd);
    detail::check_finite(a, l);
    detail::check_finite(ad, l);
  }
  return {std::move(a), std::move(ad)};
}

/// Reverse sweep over a tangent-augmented pass. Given adjoints of the primal
/// and tangent outputs, returns adjoints of the primal and tangent inputs and
/// accumulates parameter gradients (both the primal and tangent paths touch W).
inline std::pair<Matrix, Matrix> tangent_backward(const DenseNet& net, const TangentCache& cache,
                                                  Matrix primal_bar, Matrix tangent_bar,
                                                  ParamSet* grads = nullptr) {
  for (std::size_t l = net.num_layers(); l-- > 0;) {
    const auto& layer = net.layer(l);
    const Eigen::ArrayXXd d1 = detail::activate_d1(layer.activation, cache.pre[l]).array();
    const Eigen::ArrayXXd d2 = detail::activate_d2(layer.activation, cache.pre[l]).array();
    const Matrix zd_bar = (d1 * tangent_bar.array()).matrix();
    const Matrix z_bar = (d1 * primal_bar.array() +
                          d2 * cache.tangent_pre[l].array() * tangent_bar.array())
                             .matrix();
    if (grads) {
      grads->weights[l].noalias() += z_bar * cache.inputs[l].transpose();
      grads->weights[l].noalias() += zd_bar * cache.tangent_inputs[l].transpose();
      grads->biases[l] += z_bar.rowwise().sum();
    }
    primal_bar = layer.weight.transpose() * z_bar;
    tangent_bar = layer.weight.transpose() * zd_bar;
  }
  return {std::move(primal_bar), std::move(tangent_bar)};
}

// ---------------------------------------------------------------------------
// Single-sample API

inline Vector eval(const DenseNet& net, const Vector& x) { return forward(net, Matrix(x)).col(0); }

struct JvpResult {
  Vector y;
  Vector t;
};

struct VjpResult {
  Vector y;
  Vector w;
};

inline JvpResult jvp(const DenseNet& net, const Vector& x, const Vector& v) {
  detail::require_shape(v.size() == x.size(), "jvp: tangent length differs from input length");
  auto [y, t] = tangent_forward(net, Matrix(x), Matrix(v));
  return {y.col(0), t.col(0)};
}

inline VjpResult vjp(const DenseNet& net, const Vector& x, const Vector& u) {
  ForwardCache cache;
  Matrix y = forward(net, Matrix(x), &cache);
  detail::require_shape(u.size() == net.output_dim(), "vjp: cotangent length != output_dim");
  Matrix w = backward(net, cache, Matrix(u));
  return {y.col(0), w.col(0)};
}

/// The network linearized at a fixed point: repeated matrix-free J v and
/// J^T u products reuse one forward pass.
class Linearization {
 public:
  Linearization(const DenseNet& net, const Vector& x) : net_(&net) {
    y_ = forward(net, Matrix(x), &cache_).col(0);
    slopes_.reserve(net.num_layers());
    for (std::size_t l = 0; l < net.num_layers(); ++l)
      slopes_.push_back(detail::activate_d1(net.layer(l).activation, cache_.pre[l]).col(0));
  }

  const Vector& value() const { return y_; }

  Vector jvp(const Vector& v) const {
    detail::require_shape(v.size() == net_->input_dim(), "Linearization::jvp: wrong length");
    Vector t = v;
    for (std::size_t l = 0; l < net_->num_layers(); ++l)
      t = slopes_[l].cwiseProduct(net_->layer(l).weight * t);
    return t;
  }

  Vector vjp(const Vector& u) const {
    detail::require_shape(u.size() == net_->output_dim(), "Linearization::vjp: wrong length");
    Vector w = u;
    for (std::size_t l = net_->num_layers(); l-- > 0;)
      w = net_->layer(l).weight.transpose() * slopes_[l].cwiseProduct(w);
    return w;
  }

 private:
  const DenseNet* net_;
  ForwardCache cache_;
  std::vector<Vector> slopes_;
  Vector y_;
};

/// Central-difference Jacobian; test oracle only.
inline Matrix finite_diff_jacobian(const DenseNet& net, const Vector& x, double h) {
  detail::require_arg(h > 0.0, "finite_diff_jacobian: h must be positive");
  detail::check_input(net, Matrix(x), "finite_diff_jacobian");
  Matrix jac(net.output_dim(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Vector xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    jac.col(j) = (eval(net, xp) - eval(net, xm)) / (2.0 * h);
  }
  return jac;
}

/// Exact Jacobian by probing JVPs along each basis vector.
inline Matrix jacobian_by_jvp(const DenseNet& net, const Vector& x) {
  const Eigen::Index n = x.size();
  Matrix xs = x.replicate(1, n);
  auto [y, t] = tangent_forward(net, xs, Matrix::Identity(n, n));
  return t;
}

// ---------------------------------------------------------------------------
// Composition defect J_g(f(x)) J_f(x) xi - xi

namespace detail {

inline void check_pair(const DenseNet& f, const DenseNet& g) {
  require_shape(f.output_dim() == g.input_dim(), "f.output_dim != g.input_dim");
  require_shape(g.output_dim() == f.input_dim(), "g.output_dim != f.input_dim");
}

}  // namespace detail

/// Per-column ||J_g(f(x)) J_f(x) xi - xi||^2 for paired columns of x and xi.
inline Vector composition_defect(const DenseNet& f, const DenseNet& g, const Matrix& x,
                                 const Matrix& xi) {
  detail::check_pair(f, g);
  auto [y, t1] = tangent_forward(f, x, xi);
  auto [xr, t2] = tangent_forward(g, y, t1);
  return (t2 - xi).colwise().squaredNorm().transpose();
}

struct TangentLossGrad {
  double loss = 0.0;
  ParamSet grad_f;
  ParamSet grad_g;
};

/// Mean over columns of ||J_g(f(x)) J_f(x) xi - xi||^2 and its exact gradient
/// with respect to every weight and bias of f and g, scaled by `weight`.
/// Gradients are accumulated into `out` (which must be shaped like f and g).
inline double composition_defect_grad(const DenseNet& f, const DenseNet& g, const Matrix& x,
                                      const Matrix& xi, double weight, ParamSet* grad_f,
                                      ParamSet* grad_g) {
  detail::check_pair(f, g);
  detail::require_shape(x.cols() > 0, "composition_defect_grad: empty batch");
  TangentCache cf, cg;
  auto [y, t1] = tangent_forward(f, x, xi, &cf);
  auto [xr, t2] = tangent_forward(g, y, t1, &cg);
  const Matrix diff = t2 - xi;
  const double n = static_cast<double>(x.cols());
  const double loss = diff.squaredNorm() / n;
  if (grad_f || grad_g) {
    const Matrix t2_bar = (2.0 * weight / n) * diff;
    auto [y_bar, t1_bar] =
        tangent_backward(g, cg, Matrix::Zero(xr.rows(), xr.cols()), t2_bar, grad_g);
    if (grad_f) tangent_backward(f, cf, std::move(y_bar), std::move(t1_bar), grad_f);
  }
  return loss;
}

inline TangentLossGrad grad_through_tangent(const DenseNet& f, const DenseNet& g, const Vector& x,
                                            const Vector& xi) {
  detail::check_pair(f, g);
  detail::require_shape(x.size() == f.input_dim() && xi.size() == f.input_dim(),
                        "grad_through_tangent: x/xi length != f.input_dim");
  TangentLossGrad out{0.0, ParamSet::zeros_like(f), ParamSet::zeros_like(g)};
  out.loss = composition_defect_grad(f, g, Matrix(x), Matrix(xi), 1.0, &out.grad_f, &out.grad_g);
  return out;
}

// ---------------------------------------------------------------------------
// JSON: {"layers":[{"w":[[...]],"b":[...],"act":"tanh"}, ...]}, w row-major.

inline void to_json(nlohmann::json& j, const DenseNet& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers()) {
    nlohmann::json w = nlohmann::json::array();
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(l.weight.cols()));
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) row[std::size_t(c)] = l.weight(r, c);
      w.push_back(std::move(row));
    }
    std::vector<double> b(l.bias.data(), l.bias.data() + l.bias.size());
    layers.push_back({{"w", std::move(w)}, {"b", std::move(b)}, {"act", to_string(l.activation)}});
  }
  j = nlohmann::json{{"layers", std::move(layers)}};
}

inline void from_json(const nlohmann::json& j, DenseNet& net) {
  std::vector<Layer> layers;
  for (const auto& jl : j.at("layers")) {
    const auto& w = jl.at("w");
    const auto rows = static_cast<Eigen::Index>(w.size());
    const auto cols = rows ? static_cast<Eigen::Index>(w.at(0).size()) : 0;
    Layer l;
    l.weight.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto& row = w.at(std::size_t(r));
      detail::require_shape(static_cast<Eigen::Index>(row.size()) == cols, "ragged weight matrix");
      for (Eigen::Index c = 0; c < cols; ++c) l.weight(r, c) = row.at(std::size_t(c)).get<double>();
    }
    const auto b = jl.at("b").get<std::vector<double>>();
    l.bias = Eigen::Map<const Vector>(b.data(), Eigen::Index(b.size()));
    l.activation = activation_from_string(jl.value("act", std::string("identity")));
    layers.push_back(std::move(l));
  }
  net = DenseNet(std::move(layers));
}

}  // namespace deceptron
