#include "gramtex/gram_transform.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

#include "gramtex/error.hpp"

namespace gramtex {
namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double variance, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(variance));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

}  // namespace

G2VParams init_g2v(const std::string& layer_id, int channels, int out_dim, int basis_rows,
                   std::mt19937_64& rng) {
  G2VParams p;
  p.layer_id = layer_id;
  p.basis = gaussian(basis_rows, channels, 1.0 / std::max(channels, 1), rng);
  p.mixing = gaussian(out_dim, basis_rows, 1.0 / std::max(basis_rows, 1), rng);
  return p;
}

V2GParams init_v2g(const std::string& layer_id, int channels, int in_dim, int basis_rows,
                   std::mt19937_64& rng) {
  V2GParams p;
  p.layer_id = layer_id;
  p.mixing = gaussian(basis_rows, in_dim, 1.0 / std::max(basis_rows, 1), rng);
  p.basis = gaussian(basis_rows, channels, 1.0 / std::max(channels, 1), rng);
  return p;
}

Vector projection_responses(const Matrix& basis, const Matrix& gram) {
  require(gram.rows() == basis.cols() && gram.cols() == basis.cols(),
          ErrorCode::dimension_mismatch, "gram does not match projection basis width");
  return (basis * gram).cwiseProduct(basis).rowwise().sum();
}

Matrix weighted_outer_sum(const Matrix& basis, const Vector& coefficients) {
  require(coefficients.size() == basis.rows(), ErrorCode::dimension_mismatch,
          "coefficient count does not match projection basis");
  Matrix g = basis.transpose() * (coefficients.asDiagonal() * basis);
  g.triangularView<Eigen::StrictlyUpper>() = g.transpose();
  return g;
}

Vector g2v(const Matrix& gram, const G2VParams& p) {
  require(p.mixing.cols() == p.basis.rows(), ErrorCode::dimension_mismatch,
          p.layer_id + ": g2v mixing does not match basis");
  return p.mixing * projection_responses(p.basis, gram);
}

Matrix v2g(const Vector& v, const V2GParams& p) {
  require(p.mixing.cols() == v.size() && p.mixing.rows() == p.basis.rows(),
          ErrorCode::dimension_mismatch, p.layer_id + ": v2g dimension mismatch");
  return weighted_outer_sum(p.basis, p.mixing * v);
}

Matrix project_psd(const Matrix& gram) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
  const Vector clipped = eig.eigenvalues().cwiseMax(0.0);
  return weighted_outer_sum(eig.eigenvectors().transpose(), clipped);
}

void g2v_backward(const Matrix& gram, const Matrix& basis, const Matrix& mixing,
                  const Vector& d_out, Matrix& d_basis, Matrix& d_mixing, Matrix* d_gram) {
  const Vector responses = projection_responses(basis, gram);
  d_mixing.noalias() += d_out * responses.transpose();
  const Vector d_resp = mixing.transpose() * d_out;
  d_basis.noalias() += d_resp.asDiagonal() * (basis * (gram + gram.transpose()));
  if (d_gram) *d_gram = basis.transpose() * (d_resp.asDiagonal() * basis);
}

void v2g_backward(const Vector& v, const Matrix& basis, const Matrix& mixing,
                  const Matrix& d_gram, Matrix& d_basis, Matrix& d_mixing, Vector* d_v) {
  const Vector coeff = mixing * v;
  const Vector d_coeff = projection_responses(basis, d_gram);
  d_mixing.noalias() += d_coeff * v.transpose();
  d_basis.noalias() += coeff.asDiagonal() * (basis * (d_gram + d_gram.transpose()));
  if (d_v) *d_v = mixing.transpose() * d_coeff;
}

std::vector<Matrix> dense_fc_equivalent(const std::vector<Matrix>& eigenvectors,
                                        const Matrix& eigenvalues) {
  require(static_cast<Eigen::Index>(eigenvectors.size()) == eigenvalues.rows(),
          ErrorCode::dimension_mismatch, "one eigenvector set per output expected");
  std::vector<Matrix> weights;
  weights.reserve(eigenvectors.size());
  for (std::size_t k = 0; k < eigenvectors.size(); ++k) {
    const Matrix& u = eigenvectors[k];
    require(u.cols() == eigenvalues.cols(), ErrorCode::dimension_mismatch,
            "eigenvalue count does not match eigenvectors");
    weights.push_back(u * eigenvalues.row(static_cast<Eigen::Index>(k)).asDiagonal() * u.transpose());
  }
  return weights;
}

Vector apply_dense_fc(const std::vector<Matrix>& weights, const Matrix& gram) {
  Vector out(static_cast<Eigen::Index>(weights.size()));
  for (std::size_t k = 0; k < weights.size(); ++k) {
    require(weights[k].rows() == gram.rows() && weights[k].cols() == gram.cols(),
            ErrorCode::dimension_mismatch, "dense weight does not match gram");
    out(static_cast<Eigen::Index>(k)) = weights[k].cwiseProduct(gram).sum();
  }
  return out;
}

G2VParams factored_from_eigenpairs(const std::vector<Matrix>& eigenvectors,
                                   const Matrix& eigenvalues) {
  const auto d = eigenvalues.rows();
  const auto per_output = eigenvalues.cols();
  require(static_cast<Eigen::Index>(eigenvectors.size()) == d, ErrorCode::dimension_mismatch,
          "one eigenvector set per output expected");
  const auto channels = d > 0 ? eigenvectors[0].rows() : 0;
  G2VParams p;
  p.basis.resize(d * per_output, channels);
  p.mixing = Matrix::Zero(d, d * per_output);
  for (Eigen::Index k = 0; k < d; ++k) {
    const Matrix& u = eigenvectors[static_cast<std::size_t>(k)];
    require(u.rows() == channels && u.cols() == per_output, ErrorCode::dimension_mismatch,
            "inconsistent eigenvector shapes");
    for (Eigen::Index j = 0; j < per_output; ++j) {
      p.basis.row(k * per_output + j) = u.col(j).transpose();
      p.mixing(k, k * per_output + j) = eigenvalues(k, j);
    }
  }
  return p;
}

std::int64_t count_transform_params(const LayerSpec& spec, int d, TransformVariant variant,
                                    int basis_multiplier) {
  std::int64_t total = 0;
  for (const auto& layer : spec.layers) {
    const std::int64_t c = layer.channels;
    if (variant == TransformVariant::gram2vec) {
      const std::int64_t rows = static_cast<std::int64_t>(basis_multiplier) * c;
      total += rows * c + rows * d;
    } else {
      total += c * c * d;
    }
  }
  return total;
}

}  // namespace gramtex
