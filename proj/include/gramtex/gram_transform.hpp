#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gramtex/backbone.hpp"
#include "gramtex/types.hpp"

namespace gramtex {

// Gram2Vec: v = W_out [u_i^T G u_i]_{i=1..D}
// Vec2Gram: G = sum_i c_i u_i u_i^T, c = W_in v
// The D rows of `basis` are the projection vectors u_i.

struct G2VParams {
  std::string layer_id;
  Matrix basis;   // D x C
  Matrix mixing;  // d x D
};

struct V2GParams {
  std::string layer_id;
  Matrix mixing;  // D x d
  Matrix basis;   // D x C
};

/// Number of projection vectors for a layer with `channels` channels.
inline int basis_size(int channels, int multiplier = 8) { return multiplier * channels; }

/// Random init: basis ~ N(0, 1/C), mixing ~ N(0, 1/D).
G2VParams init_g2v(const std::string& layer_id, int channels, int out_dim, int basis_rows,
                   std::mt19937_64& rng);
V2GParams init_v2g(const std::string& layer_id, int channels, int in_dim, int basis_rows,
                   std::mt19937_64& rng);

/// [u_i^T G u_i] for every row u_i of `basis`.
Vector projection_responses(const Matrix& basis, const Matrix& gram);

/// sum_i c_i u_i u_i^T, mirrored from the lower triangle so G == G^T exactly.
Matrix weighted_outer_sum(const Matrix& basis, const Vector& coefficients);

Vector g2v(const Matrix& gram, const G2VParams& p);
Matrix v2g(const Vector& v, const V2GParams& p);

/// Clips negative eigenvalues to zero (optional post-processing of v2g output).
Matrix project_psd(const Matrix& gram);

/// Accumulates gradients of a scalar loss through g2v. `d_out` is dL/dv.
void g2v_backward(const Matrix& gram, const Matrix& basis, const Matrix& mixing,
                  const Vector& d_out, Matrix& d_basis, Matrix& d_mixing, Matrix* d_gram);

/// Accumulates gradients through v2g. `d_gram` is dL/dG.
void v2g_backward(const Vector& v, const Matrix& basis, const Matrix& mixing,
                  const Matrix& d_gram, Matrix& d_basis, Matrix& d_mixing, Vector* d_v);

// ---- Dense fully-connected counterpart --------------------------------------

/// W^(k) = sum_j gamma_j^(k) u_j^(k) u_j^(k)^T. `eigenvectors[k]` holds the
/// u_j^(k) as columns; `eigenvalues` is d x C.
std::vector<Matrix> dense_fc_equivalent(const std::vector<Matrix>& eigenvectors,
                                        const Matrix& eigenvalues);

/// [<W^(k), G>]_k, the Frobenius inner products.
Vector apply_dense_fc(const std::vector<Matrix>& weights, const Matrix& gram);

/// Factored form of the same map: D = C*d projection vectors with a
/// diagonal-block mixing map holding the eigenvalues.
G2VParams factored_from_eigenpairs(const std::vector<Matrix>& eigenvectors,
                                   const Matrix& eigenvalues);

enum class TransformVariant { gram2vec, dense_fc };

/// Per-direction transform parameter count summed over the layers of `spec`:
/// gram2vec uses D*C + D*d with D = multiplier*C, dense_fc uses C^2*d.
std::int64_t count_transform_params(const LayerSpec& spec, int d, TransformVariant variant,
                                    int basis_multiplier = 8);

}  // namespace gramtex
