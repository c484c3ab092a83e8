#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "gramtex/types.hpp"

namespace gramtex::testing {

/// Central difference of f with respect to one scalar it reads through `x`.
inline double central_difference(const std::function<double()>& f, double& x, double h = 1e-5) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * h);
}

/// ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(const Vector& a, const Vector& b, double floor = 1e-10) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

inline double relative_error(double a, double b, double floor = 1e-10) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                            double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  }
  return m;
}

inline Vector random_vector(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
  return random_matrix(n, 1, rng, scale).col(0);
}

/// Symmetric positive definite matrix A A^T / c + shift I.
inline Matrix random_spd(Eigen::Index c, std::mt19937_64& rng, double shift = 0.1) {
  const Matrix a = random_matrix(c, c, rng);
  return a * a.transpose() / static_cast<double>(c) + shift * Matrix::Identity(c, c);
}

}  // namespace gramtex::testing
