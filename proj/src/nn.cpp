#include "gramtex/nn.hpp"

#include <cmath>

#include "gramtex/error.hpp"

namespace gramtex {

Affine init_affine(int in_dim, int out_dim, std::mt19937_64& rng, double gain) {
  Affine a;
  std::normal_distribution<double> normal(0.0, std::sqrt(gain / std::max(in_dim, 1)));
  a.weight.resize(out_dim, in_dim);
  for (Eigen::Index i = 0; i < a.weight.size(); ++i) a.weight.data()[i] = normal(rng);
  a.bias = Vector::Zero(out_dim);
  return a;
}

Matrix affine_forward(const Affine& layer, const Matrix& x, bool rectify_input) {
  require(x.rows() == layer.in_dim(), ErrorCode::dimension_mismatch,
          "affine input width " + std::to_string(x.rows()) + " != " +
              std::to_string(layer.in_dim()));
  Matrix y = rectify_input ? Matrix(layer.weight * relu(x)) : Matrix(layer.weight * x);
  y.colwise() += layer.bias;
  return y;
}

void affine_backward(const Affine& layer, const Matrix& x, bool rectify_input,
                     const Matrix& d_out, Affine* grad, Matrix* d_x) {
  if (grad) {
    if (rectify_input) {
      grad->weight.noalias() += d_out * relu(x).transpose();
    } else {
      grad->weight.noalias() += d_out * x.transpose();
    }
    grad->bias += d_out.rowwise().sum();
  }
  if (d_x) {
    Matrix dx = layer.weight.transpose() * d_out;
    if (rectify_input) dx = (x.array() > 0.0).select(dx, 0.0);
    *d_x = std::move(dx);
  }
}

}  // namespace gramtex
