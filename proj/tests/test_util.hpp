#pragma once

#include <cmath>
#include <vector>

#include "deceptron/all.hpp"

namespace testutil {

using namespace deceptron;

/// Random dense net with 1..max_layers layers, every width in [1, max_dim].
inline DenseNet random_net(Rng& rng, int d_in, int d_out, int max_layers = 3, int max_dim = 32,
                           double gain = 1.0) {
  const int layers = uniform_int(rng, 1, max_layers);
  std::vector<int> dims{d_in};
  for (int i = 1; i < layers; ++i) dims.push_back(uniform_int(rng, 1, max_dim));
  dims.push_back(d_out);
  std::vector<Layer> ls;
  const Activation acts[] = {Activation::tanh, Activation::softplus, Activation::identity};
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    Layer l;
    l.weight = gaussian_matrix(rng, dims[i + 1], dims[i]) * (gain / std::sqrt(double(dims[i])));
    l.bias = gaussian_vector(rng, dims[i + 1]) * 0.3;
    l.activation = acts[uniform_int(rng, 0, 2)];
    ls.push_back(l);
  }
  return DenseNet(ls);
}

inline double rel_err(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / std::max(1.0, b.norm());
}

/// Loss-as-function-of-one-parameter central difference.
template <class F>
double central_diff(double& param, double h, F&& loss) {
  const double saved = param;
  param = saved + h;
  const double lp = loss();
  param = saved - h;
  const double lm = loss();
  param = saved;
  return (lp - lm) / (2 * h);
}

}  // namespace testutil
