#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include <Eigen/Dense>

#include "deceptron/errors.hpp"
#include "deceptron/rng.hpp"

namespace deceptron {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct PowerIterationResult {
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

// Fixed pseudo-random start so results are reproducible and almost surely
// not orthogonal to the dominant eigenvector.
inline Vector power_start(Eigen::Index n) {
  Rng rng = make_rng(0x5eed5eedULL);
  Vector v = gaussian_vector(rng, n);
  return v / v.norm();
}

/// Largest eigenvalue of a symmetric PSD operator given as a callable v -> Av.
template <class Apply>
PowerIterationResult dominant_eigenvalue(Eigen::Index n, Apply&& apply, double rel_tol,
                                         int max_iters) {
  PowerIterationResult out;
  if (n == 0) {
    out.converged = true;
    return out;
  }
  Vector v = power_start(n);
  double lambda = 0.0;
  for (int it = 1; it <= max_iters; ++it) {
    Vector w = apply(v);
    const double next = v.dot(w);  // Rayleigh quotient, v is unit length
    const double wn = w.norm();
    out.iterations = it;
    if (wn == 0.0) {
      out.value = 0.0;
      out.converged = true;
      return out;
    }
    v = w / wn;
    if (it > 1 && std::abs(next - lambda) <= rel_tol * std::abs(next)) {
      lambda = next;
      out.converged = true;
      break;
    }
    lambda = next;
  }
  out.value = lambda;
  return out;
}

}  // namespace detail

/// ||A||_2 by power iteration on A^T A.
inline PowerIterationResult spectral_norm(const Matrix& a, double rel_tol = 1e-10,
                                          int max_iters = 10000) {
  auto r = detail::dominant_eigenvalue(
      a.cols(), [&](const Vector& v) -> Vector { return a.transpose() * (a * v); }, rel_tol,
      max_iters);
  r.value = std::sqrt(std::max(r.value, 0.0));
  return r;
}

/// sigma_min(J) for a tall J by inverse power iteration on J^T J.
/// Returns 0 when J^T J is not positive definite.
inline PowerIterationResult smallest_singular_value(const Matrix& j, double rel_tol = 1e-10,
                                                    int max_iters = 10000) {
  const Matrix gram = j.transpose() * j;
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success) return {0.0, 0, true};
  auto r = detail::dominant_eigenvalue(
      gram.cols(), [&](const Vector& v) -> Vector { return llt.solve(v); }, rel_tol, max_iters);
  r.value = r.value > 0.0 ? 1.0 / std::sqrt(r.value) : 0.0;
  return r;
}

/// Moore-Penrose pseudoinverse of a full-column-rank J: (J^T J)^{-1} J^T.
inline Matrix pseudo_inverse(const Matrix& j) {
  const Matrix gram = j.transpose() * j;
  Eigen::LDLT<Matrix> ldlt(gram);
  if (ldlt.info() != Eigen::Success) throw RankDeficientError("J^T J is singular");
  return ldlt.solve(j.transpose());
}

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

inline double rmse(const Vector& a, const Vector& b) {
  if (a.size() == 0) return 0.0;
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

/// Random matrix with orthonormal columns (rows >= cols), via QR of a Gaussian matrix.
inline Matrix random_orthonormal(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix g = gaussian_matrix(rng, rows, cols);
  Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ() * Matrix::Identity(rows, cols);
}

}  // namespace deceptron
