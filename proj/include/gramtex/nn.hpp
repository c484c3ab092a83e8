#pragma once

#include <cmath>
#include <random>

#include "gramtex/types.hpp"

namespace gramtex {

/// y = W x + b, applied column-wise to a batch.
struct Affine {
  Matrix weight;  // out x in
  Vector bias;

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }
};

/// He-normal weights (variance gain/in), zero bias.
Affine init_affine(int in_dim, int out_dim, std::mt19937_64& rng, double gain = 2.0);

inline Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

/// W relu(x) + b when `rectify_input`, else W x + b. Columns are samples.
Matrix affine_forward(const Affine& layer, const Matrix& x, bool rectify_input);

/// Accumulates parameter gradients into `grad` (if given) and writes dL/dx
/// (if requested).
void affine_backward(const Affine& layer, const Matrix& x, bool rectify_input,
                     const Matrix& d_out, Affine* grad, Matrix* d_x);

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace gramtex
