#include <random>

#include <gtest/gtest.h>

#include "gramtex/error.hpp"
#include "gramtex/gram_transform.hpp"
#include "support/finite_difference.hpp"

using namespace gramtex;
using gramtex::testing::central_difference;
using gramtex::testing::random_matrix;
using gramtex::testing::random_spd;
using gramtex::testing::random_vector;
using gramtex::testing::relative_error;

namespace {

G2VParams random_g2v(int c, int d_rows, int d, std::mt19937_64& rng) {
  return {"layer", random_matrix(d_rows, c, rng), random_matrix(d, d_rows, rng)};
}

V2GParams random_v2g(int c, int d_rows, int d, std::mt19937_64& rng) {
  return {"layer", random_matrix(d_rows, d, rng), random_matrix(d_rows, c, rng)};
}

// <u u^T, G> by materialising the outer product and taking the Frobenius product.
double frobenius_response(const Vector& u, const Matrix& g) {
  const Matrix outer = u * u.transpose();
  double s = 0.0;
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    for (Eigen::Index j = 0; j < g.cols(); ++j) s += outer(i, j) * g(i, j);
  }
  return s;
}

}  // namespace

TEST(G2V, ZeroGramGivesZeroVector) {
  std::mt19937_64 rng(1);
  const auto p = random_g2v(4, 6, 3, rng);
  EXPECT_EQ(g2v(Matrix::Zero(4, 4), p), Vector::Zero(3));
}

TEST(G2V, ScalarCase) {
  const G2VParams p{"layer", Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 1.0)};
  const Vector v = g2v(Matrix::Constant(1, 1, 5.0), p);
  ASSERT_EQ(v.size(), 1);
  EXPECT_DOUBLE_EQ(v[0], 5.0);
}

TEST(G2V, MatchesOuterProductOracle) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = random_g2v(4, 3, 2, rng);
    const Matrix g = random_spd(4, rng);
    Vector responses(3);
    for (int i = 0; i < 3; ++i) responses[i] = frobenius_response(p.basis.row(i).transpose(), g);
    const Vector expected = p.mixing * responses;
    EXPECT_LT(relative_error(g2v(g, p), expected), 1e-6);
  }
}

TEST(G2V, Linear) {
  std::mt19937_64 rng(3);
  const auto p = random_g2v(5, 40, 7, rng);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix g1 = random_spd(5, rng), g2 = random_spd(5, rng);
    const double a = random_vector(1, rng)[0], b = random_vector(1, rng)[0];
    EXPECT_LT(relative_error(g2v(a * g1 + b * g2, p), a * g2v(g1, p) + b * g2v(g2, p)), 1e-6);
  }
}

TEST(G2V, DimensionMismatchThrows) {
  std::mt19937_64 rng(4);
  const auto p = random_g2v(4, 6, 3, rng);
  EXPECT_THROW(g2v(Matrix::Zero(3, 3), p), Error);
}

TEST(V2G, ZeroVectorGivesZeroMatrix) {
  std::mt19937_64 rng(5);
  const auto p = random_v2g(4, 6, 3, rng);
  EXPECT_EQ(v2g(Vector::Zero(3), p), Matrix::Zero(4, 4));
}

TEST(V2G, SingleRankOneTerm) {
  V2GParams p{"layer", Matrix::Constant(1, 1, 1.0), Matrix::Zero(1, 3)};
  p.basis(0, 0) = 1.0;
  const Matrix g = v2g(Vector::Constant(1, 1.0), p);
  Matrix expected = Matrix::Zero(3, 3);
  expected(0, 0) = 1.0;
  EXPECT_EQ(g, expected);
}

TEST(V2G, MatchesExplicitSumOracle) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = random_v2g(4, 9, 3, rng);
    const Vector v = random_vector(3, rng);
    const Vector c = p.mixing * v;
    Matrix expected = Matrix::Zero(4, 4);
    for (int i = 0; i < 9; ++i) {
      const Vector u = p.basis.row(i).transpose();
      expected += c[i] * (u * u.transpose());
    }
    EXPECT_LT((v2g(v, p) - expected).norm() / expected.norm(), 1e-6);
  }
}

TEST(V2G, OutputIsExactlySymmetric) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = random_v2g(7, 56, 5, rng);
    const Matrix g = v2g(random_vector(5, rng), p);
    EXPECT_EQ(g, g.transpose());
  }
}

TEST(V2G, Linear) {
  std::mt19937_64 rng(8);
  const auto p = random_v2g(4, 32, 6, rng);
  const Vector v1 = random_vector(6, rng), v2 = random_vector(6, rng);
  const Matrix lhs = v2g(2.0 * v1 - 0.5 * v2, p);
  const Matrix rhs = 2.0 * v2g(v1, p) - 0.5 * v2g(v2, p);
  EXPECT_LT((lhs - rhs).norm() / rhs.norm(), 1e-12);
}

TEST(DenseFc, ZeroEigenvaluesGiveZeroWeights) {
  std::mt19937_64 rng(9);
  const std::vector<Matrix> u{random_matrix(3, 3, rng), random_matrix(3, 3, rng)};
  const auto w = dense_fc_equivalent(u, Matrix::Zero(2, 3));
  for (const auto& wk : w) EXPECT_EQ(wk, Matrix::Zero(3, 3));
  EXPECT_EQ(apply_dense_fc(w, random_spd(3, rng)), Vector::Zero(2));
}

TEST(DenseFc, SingleEigenpairPicksEntry) {
  Matrix u = Matrix::Zero(2, 1);
  u(0, 0) = 1.0;
  const auto w = dense_fc_equivalent({u}, Matrix::Constant(1, 1, 1.0));
  Matrix e11 = Matrix::Zero(2, 2);
  e11(0, 0) = 1.0;
  EXPECT_EQ(w[0], e11);
  Matrix g(2, 2);
  g << 3.0, 1.0, 1.0, 7.0;
  EXPECT_DOUBLE_EQ(apply_dense_fc(w, g)[0], 3.0);
}

TEST(DenseFc, EquivalentToFactoredPath) {
  std::mt19937_64 rng(10);
  const int d = 2, c = 3;
  std::vector<Matrix> u;
  for (int k = 0; k < d; ++k) {
    u.push_back(Eigen::HouseholderQR<Matrix>(random_matrix(c, c, rng)).householderQ() * Matrix::Identity(c, c));
  }
  const Matrix gamma = random_matrix(d, c, rng);
  const auto w = dense_fc_equivalent(u, gamma);
  const G2VParams factored = factored_from_eigenpairs(u, gamma);
  EXPECT_EQ(factored.basis.rows(), c * d);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix g = random_spd(c, rng);
    EXPECT_LT(relative_error(apply_dense_fc(w, g), g2v(g, factored)), 1e-6);
  }
}

TEST(CountTransformParams, ArithmeticOracle) {
  const LayerSpec spec{"b", {{"x", 512, 1}}};
  EXPECT_EQ(count_transform_params(spec, 512, TransformVariant::gram2vec), 8LL * 512 * 512 + 8LL * 512 * 512);
  EXPECT_EQ(count_transform_params(spec, 512, TransformVariant::gram2vec), 4194304);
  EXPECT_EQ(count_transform_params(spec, 512, TransformVariant::dense_fc), 134217728);
}

TEST(CountTransformParams, ZeroChannels) {
  const LayerSpec spec{"b", {{"x", 0, 1}}};
  EXPECT_EQ(count_transform_params(spec, 512, TransformVariant::gram2vec), 0);
  EXPECT_EQ(count_transform_params(spec, 512, TransformVariant::dense_fc), 0);
}

TEST(CountTransformParams, MatchesInitializedShapes) {
  std::mt19937_64 rng(11);
  const auto g = init_g2v("x", 6, 5, basis_size(6), rng);
  const LayerSpec spec{"b", {{"x", 6, 1}}};
  EXPECT_EQ(count_transform_params(spec, 5, TransformVariant::gram2vec), g.basis.size() + g.mixing.size());
  EXPECT_EQ(g.basis.rows(), 48);
}

TEST(ProjectPsd, ClipsNegativeEigenvalues) {
  Matrix g(2, 2);
  g << 1.0, 2.0, 2.0, 1.0;  // eigenvalues 3 and -1
  const Matrix p = project_psd(g);
  const Vector eig = Eigen::SelfAdjointEigenSolver<Matrix>(p).eigenvalues();
  EXPECT_NEAR(eig[0], 0.0, 1e-12);
  EXPECT_NEAR(eig[1], 3.0, 1e-12);
  EXPECT_EQ(p, p.transpose());
}

TEST(G2VGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  const int c = 4, rows = 6, d = 3;
  G2VParams p = random_g2v(c, rows, d, rng);
  Matrix g = random_spd(c, rng);
  const Vector weights = random_vector(d, rng);
  auto loss = [&] { return weights.dot(g2v(g, p)); };

  Matrix d_basis = Matrix::Zero(rows, c), d_mixing = Matrix::Zero(d, rows), d_gram;
  g2v_backward(g, p.basis, p.mixing, weights, d_basis, d_mixing, &d_gram);

  auto check = [&](Matrix& param, const Matrix& analytic) {
    Matrix numeric(param.rows(), param.cols());
    for (Eigen::Index i = 0; i < param.size(); ++i) numeric.data()[i] = central_difference(loss, param.data()[i]);
    EXPECT_LT((numeric - analytic).norm() / numeric.norm(), 1e-4);
  };
  check(p.basis, d_basis);
  check(p.mixing, d_mixing);
  check(g, d_gram);
}

TEST(V2GGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  const int c = 4, rows = 7, d = 3;
  V2GParams p = random_v2g(c, rows, d, rng);
  Vector v = random_vector(d, rng);
  const Matrix r = random_matrix(c, c, rng);  // loss = <R, v2g(v)>
  auto loss = [&] { return (r.array() * v2g(v, p).array()).sum(); };

  Matrix d_basis = Matrix::Zero(rows, c), d_mixing = Matrix::Zero(rows, d);
  Vector d_v;
  v2g_backward(v, p.basis, p.mixing, r, d_basis, d_mixing, &d_v);

  auto check = [&](double* data, Eigen::Index n, const double* analytic) {
    Vector num(n), ana(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      num[i] = central_difference(loss, data[i]);
      ana[i] = analytic[i];
    }
    EXPECT_LT(relative_error(num, ana), 1e-4);
  };
  check(p.basis.data(), p.basis.size(), d_basis.data());
  check(p.mixing.data(), p.mixing.size(), d_mixing.data());
  check(v.data(), v.size(), d_v.data());
}

TEST(Init, BasisAndMixingScales) {
  std::mt19937_64 rng(14);
  const auto p = init_g2v("x", 64, 32, 512, rng);
  const double basis_var = p.basis.squaredNorm() / static_cast<double>(p.basis.size());
  const double mixing_var = p.mixing.squaredNorm() / static_cast<double>(p.mixing.size());
  EXPECT_NEAR(basis_var, 1.0 / 64, 0.1 / 64);
  EXPECT_NEAR(mixing_var, 1.0 / 512, 0.1 / 512);
}
