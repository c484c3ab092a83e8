#include <array>
#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "gramtex/error.hpp"
#include "gramtex/latent_gmm.hpp"
#include "support/finite_difference.hpp"

using namespace gramtex;
using gramtex::testing::random_matrix;
using gramtex::testing::random_spd;
using gramtex::testing::random_vector;

namespace {

Matrix normal_codes(int d, int n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(d, n);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = normal(rng);
  return out;
}

// Three unit-variance clusters on a 10-sigma simplex in d = 4.
Matrix three_clusters(int per_cluster, std::mt19937_64& rng, std::vector<Vector>& centers) {
  centers.assign(3, Vector::Zero(4));
  centers[0](0) = 10.0;
  centers[1](1) = 10.0;
  centers[2](2) = 10.0;
  Matrix codes(4, 3 * per_cluster);
  for (int k = 0; k < 3; ++k) {
    codes.middleCols(k * per_cluster, per_cluster) = normal_codes(4, per_cluster, rng).colwise() + centers[k];
  }
  return codes;
}

GmmModel two_component_model() {
  GmmModel gmm;
  gmm.weights = Vector(2);
  gmm.weights << 0.3, 0.7;
  gmm.means = {Vector::Constant(2, -5.0), Vector::Constant(2, 5.0)};
  gmm.covs = {Matrix::Identity(2, 2), 2.0 * Matrix::Identity(2, 2)};
  return gmm;
}

}  // namespace

// ---- fitting -------------------------------------------------------------------------

TEST(FitGmm, SingleComponentIsClosedForm) {
  std::mt19937_64 rng(1);
  const Matrix a = random_matrix(3, 3, rng);
  const Matrix codes = (a * normal_codes(3, 400, rng)).colwise() + Vector::Constant(3, 2.0);
  const GmmModel gmm = fit_gmm(codes, 1, 7);
  const Vector mean = codes.rowwise().mean();
  const Matrix centered = codes.colwise() - mean;
  const Matrix cov = centered * centered.transpose() / 400.0;
  EXPECT_NEAR(gmm.weights(0), 1.0, 1e-12);
  EXPECT_LT((gmm.means[0] - mean).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((gmm.covs[0] - cov).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(FitGmm, RecoversWellSeparatedClusters) {
  std::mt19937_64 rng(2);
  std::vector<Vector> centers;
  const int per = 1000;
  const Matrix codes = three_clusters(per, rng, centers);
  GmmFitReport report;
  const GmmModel gmm = fit_gmm(codes, 3, 11, {}, &report);
  EXPECT_TRUE(report.converged);
  for (int c = 0; c < 3; ++c) {
    const Vector empirical = codes.middleCols(c * per, per).rowwise().mean();
    int best = 0;
    for (int k = 1; k < 3; ++k) {
      if ((gmm.means[k] - centers[c]).norm() < (gmm.means[best] - centers[c]).norm()) best = k;
    }
    EXPECT_LT((gmm.means[best] - centers[c]).cwiseAbs().maxCoeff(), 0.1) << "cluster " << c;
    EXPECT_LT((gmm.means[best] - empirical).cwiseAbs().maxCoeff(), 1e-6) << "cluster " << c;
    EXPECT_NEAR(gmm.weights(best), 1.0 / 3.0, 1e-6);
  }
}

TEST(FitGmm, LogLikelihoodIsMonotone) {
  std::mt19937_64 rng(3);
  const Matrix codes = normal_codes(5, 600, rng);
  for (int k : {2, 4, 8}) {
    GmmFitReport report;
    fit_gmm(codes, k, 13 + k, {}, &report);
    ASSERT_GE(report.log_likelihood.size(), 2u);
    for (std::size_t i = 1; i < report.log_likelihood.size(); ++i) {
      EXPECT_GE(report.log_likelihood[i], report.log_likelihood[i - 1] - 1e-10) << "k " << k << " it " << i;
    }
  }
}

TEST(FitGmm, IdenticalCodesHitTheFloor) {
  const Matrix codes = Matrix::Constant(3, 20, 1.5);
  GmmFitOptions options;
  options.floor = 1e-4;
  const GmmModel gmm = fit_gmm(codes, 2, 5, options);
  for (int k = 0; k < 2; ++k) {
    EXPECT_LT((gmm.means[k] - Vector::Constant(3, 1.5)).norm(), 1e-12);
    const Vector eig = Eigen::SelfAdjointEigenSolver<Matrix>(gmm.covs[k]).eigenvalues();
    EXPECT_NEAR(eig.minCoeff(), 1e-4, 1e-10);
  }
  EXPECT_TRUE(std::isfinite(mean_log_likelihood(gmm, codes)));
}

TEST(FitGmm, CovariancesRespectFloor) {
  std::mt19937_64 rng(4);
  Matrix codes = normal_codes(4, 200, rng);
  codes.row(3).setZero();  // degenerate direction
  GmmFitOptions options;
  options.floor = 1e-3;
  const GmmModel gmm = fit_gmm(codes, 3, 6, options);
  for (const auto& c : gmm.covs) {
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Matrix>(c).eigenvalues().minCoeff(), 1e-3 - 1e-12);
    EXPECT_EQ(c, c.transpose());
  }
}

TEST(FitGmm, DeterministicPerSeed) {
  std::mt19937_64 rng(5);
  const Matrix codes = normal_codes(3, 150, rng);
  const GmmModel a = fit_gmm(codes, 4, 9), b = fit_gmm(codes, 4, 9);
  EXPECT_EQ(a.weights, b.weights);
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(a.means[k], b.means[k]);
    EXPECT_EQ(a.covs[k], b.covs[k]);
  }
}

TEST(FitGmm, Errors) {
  std::mt19937_64 rng(6);
  const Matrix codes = normal_codes(2, 3, rng);
  try {
    fit_gmm(codes, 4, 1);
    FAIL() << "expected insufficient_samples";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::insufficient_samples);
  }
  EXPECT_THROW(fit_gmm(codes, 0, 1), Error);
  Matrix bad = codes;
  bad(0, 0) = std::nan("");
  EXPECT_THROW(fit_gmm(bad, 1, 1), Error);
}

TEST(Responsibilities, ColumnsSumToOne) {
  std::mt19937_64 rng(7);
  const Matrix codes = normal_codes(3, 100, rng);
  const GmmModel gmm = fit_gmm(codes, 5, 3);
  const Matrix r = responsibilities(gmm, codes);
  EXPECT_EQ(r.rows(), 5);
  EXPECT_LT((r.colwise().sum().array() - 1.0).abs().maxCoeff(), 1e-9);
  EXPECT_GE(r.minCoeff(), 0.0);
}

TEST(MeanLogLikelihood, MatchesGaussianDensityOracle) {
  GmmModel gmm;
  gmm.weights = Vector::Ones(1);
  gmm.means = {Vector::Zero(2)};
  gmm.covs = {Matrix::Identity(2, 2)};
  Matrix x = Matrix::Zero(2, 1);
  EXPECT_NEAR(mean_log_likelihood(gmm, x), -std::log(2.0 * M_PI), 1e-12);
  x(0, 0) = 1.0;
  EXPECT_NEAR(mean_log_likelihood(gmm, x), -std::log(2.0 * M_PI) - 0.5, 1e-12);
}

// ---- sampling ------------------------------------------------------------------------

TEST(SymmetricSqrt, IdentityDiagonalAndRandom) {
  EXPECT_EQ(symmetric_sqrt(Matrix::Identity(4, 4)), Matrix::Identity(4, 4));
  Vector diag(3);
  diag << 4.0, 9.0, 0.25;
  const Matrix s = symmetric_sqrt(diag.asDiagonal());
  Vector expected(3);
  expected << 2.0, 3.0, 0.5;
  EXPECT_EQ(Vector(s.diagonal()), expected);
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix sigma = random_spd(6, rng);
    const Matrix r = symmetric_sqrt(sigma);
    EXPECT_LT((r * r.transpose() - sigma).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_EQ(r, r.transpose());
  }
}

TEST(SymmetricSqrt, RejectsIndefinite) {
  Matrix g(2, 2);
  g << 1.0, 2.0, 2.0, 1.0;
  EXPECT_THROW(symmetric_sqrt(g), Error);
}

TEST(Sample, AffineMomentsMatchModel) {
  std::mt19937_64 rng(9);
  const int d = 8;
  AffineSampler sampler;
  sampler.weights = Vector::Ones(1);
  sampler.biases = {random_vector(d, rng)};
  const Matrix sigma = random_spd(d, rng);
  sampler.scales = {symmetric_sqrt(sigma)};
  std::mt19937_64 draw(10);
  const Matrix x = sample(sampler, 100000, draw);
  const Vector mean = x.rowwise().mean();
  const Matrix centered = x.colwise() - mean;
  const Matrix cov = centered * centered.transpose() / (x.cols() - 1.0);
  EXPECT_LT((mean - sampler.biases[0]).norm() / sampler.biases[0].norm(), 0.05);
  EXPECT_LT((cov - sigma).norm() / sigma.norm(), 0.05);
}

TEST(Sample, ComponentFrequenciesFollowWeights) {
  const GmmModel gmm = two_component_model();
  std::mt19937_64 rng(11);
  std::vector<int> components;
  const int n = 100000;
  const Matrix x = sample(gmm, n, rng, &components);
  const double count = static_cast<double>(std::count(components.begin(), components.end(), 0));
  const double sd = std::sqrt(n * 0.3 * 0.7);
  EXPECT_LT(std::abs(count - 0.3 * n), 3.0 * sd);
  for (int j = 0; j < 100; ++j) {
    EXPECT_EQ(x(0, j) > 0.0, components[static_cast<std::size_t>(j)] == 1);
  }
}

TEST(Sample, FloorCovarianceCollapsesOntoMean) {
  GmmModel gmm;
  gmm.weights = Vector::Ones(1);
  gmm.means = {Vector::Constant(3, 0.25)};
  gmm.covs = {1e-12 * Matrix::Identity(3, 3)};
  std::mt19937_64 rng(12);
  const Matrix x = sample(gmm, 50, rng);
  EXPECT_LT((x.colwise() - gmm.means[0]).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Sample, StandardNormalMatchesRawNormalStream) {
  const AffineSampler prior = standard_normal_sampler(5);
  std::mt19937_64 a(13), b(13);
  const Matrix x = sample(prior, 7, a);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int j = 0; j < 7; ++j) {
    for (int i = 0; i < 5; ++i) EXPECT_EQ(x(i, j), normal(b));
  }
}

TEST(Sample, SameSeedSameSamples) {
  const GmmModel gmm = two_component_model();
  std::mt19937_64 a(14), b(14), c(15);
  const Matrix x = sample(gmm, 30, a);
  EXPECT_EQ(x, sample(gmm, 30, b));
  EXPECT_NE(x, sample(gmm, 30, c));
}

// ---- model selection -----------------------------------------------------------------

TEST(SelectComponents, SingleGaussianPrefersOne) {
  std::mt19937_64 rng(16);
  const Matrix codes = normal_codes(3, 400, rng);
  const std::array<int, 2> candidates{1, 8};
  std::vector<double> scores;
  EXPECT_EQ(select_n_components(codes, candidates, 5, 3, {}, &scores), 1);
  ASSERT_EQ(scores.size(), 2u);
  EXPECT_GT(scores[0], scores[1]);
}

TEST(SelectComponents, SeparatedClustersPreferThree) {
  std::mt19937_64 rng(17);
  std::vector<Vector> centers;
  const Matrix codes = three_clusters(100, rng, centers);
  const std::array<int, 3> candidates{1, 3, 2};
  EXPECT_EQ(select_n_components(codes, candidates, 5, 4), 3);
}

TEST(SelectComponents, SingleCandidateNeedsNoFit) {
  const std::array<int, 1> candidates{6};
  EXPECT_EQ(select_n_components(Matrix::Zero(2, 3), candidates, 5, 1), 6);
}

TEST(SelectComponents, TiesGoToSmallest) {
  const Matrix codes = Matrix::Constant(2, 40, 0.5);
  const std::array<int, 2> candidates{4, 2};
  EXPECT_EQ(select_n_components(codes, candidates, 4, 2), 2);
}

TEST(SelectComponents, TooFewCodes) {
  std::mt19937_64 rng(18);
  const std::array<int, 2> candidates{1, 8};
  EXPECT_THROW(select_n_components(normal_codes(2, 8, rng), candidates, 5, 1), Error);
}

// ---- persistence ---------------------------------------------------------------------

TEST(GmmFile, RoundTrip) {
  std::mt19937_64 rng(19);
  const GmmModel gmm = fit_gmm(normal_codes(3, 80, rng), 3, 2);
  const auto path = std::filesystem::temp_directory_path() / "gramtex_test_gmm.h5";
  save_gmm(path, gmm);
  const GmmModel back = load_gmm(path);
  EXPECT_EQ(back.weights, gmm.weights);
  EXPECT_EQ(back.floor, gmm.floor);
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(back.means[k], gmm.means[k]);
    EXPECT_EQ(back.covs[k], gmm.covs[k]);
  }
  std::filesystem::remove(path);
  try {
    load_gmm(path);
    FAIL() << "expected io error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::io);
  }
}
