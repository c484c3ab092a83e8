#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "gramtex/types.hpp"

namespace gramtex {

struct GmmModel {
  Vector weights;            // n_c, sums to 1
  std::vector<Vector> means;
  std::vector<Matrix> covs;  // eigenvalues >= floor
  double floor = 1e-6;

  int n_components() const { return static_cast<int>(weights.size()); }
  int dim() const { return means.empty() ? 0 : static_cast<int>(means.front().size()); }
};

struct GmmFitOptions {
  double floor = 1e-6;
  int max_iters = 500;
  double tolerance = 1e-6;  // per-sample log-likelihood improvement
};

struct GmmFitReport {
  std::vector<double> log_likelihood;  // mean per-sample value after each EM iteration
  int iterations = 0;
  bool converged = false;
  int reseeded = 0;
};

/// Full-covariance EM with k-means++ initialisation. Codes are the columns
/// of `codes` (d x N).
GmmModel fit_gmm(const Matrix& codes, int n_components, std::uint64_t seed,
                 const GmmFitOptions& options = {}, GmmFitReport* report = nullptr);

/// Mean per-sample log-likelihood of the columns of `codes`.
double mean_log_likelihood(const GmmModel& gmm, const Matrix& codes);

/// Responsibilities, n_c x N; every column sums to 1.
Matrix responsibilities(const GmmModel& gmm, const Matrix& codes);

/// Symmetric square root S = V diag(sqrt(max(lambda, 0))) V^T, so S S^T = Sigma.
/// Diagonal inputs take the elementwise square root directly.
Matrix symmetric_sqrt(const Matrix& sigma);

struct AffineSampler {
  Vector weights;
  std::vector<Vector> biases;   // mu_k
  std::vector<Matrix> scales;   // S_k
};

AffineSampler to_affine_sampler(const GmmModel& gmm);

/// Draws one component index (only when n_c > 1) and then a standard normal
/// vector, and maps it through mu_k + S_k eps. Columns of the result are samples.
Matrix sample(const AffineSampler& sampler, int n, std::mt19937_64& rng,
              std::vector<int>* components = nullptr);
Matrix sample(const GmmModel& gmm, int n, std::mt19937_64& rng,
              std::vector<int>* components = nullptr);

/// Standard normal prior N(0, I_d) as a one-component sampler.
AffineSampler standard_normal_sampler(int dim);

/// k-fold cross-validated choice among `candidates` by mean held-out
/// log-likelihood; ties go to the smallest candidate.
int select_n_components(const Matrix& codes, std::span<const int> candidates, int folds,
                        std::uint64_t seed, const GmmFitOptions& options = {},
                        std::vector<double>* scores = nullptr);

void save_gmm(const std::filesystem::path& path, const GmmModel& gmm);
GmmModel load_gmm(const std::filesystem::path& path);

}  // namespace gramtex
