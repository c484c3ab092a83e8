#include "gramtex/latent_gmm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <spdlog/spdlog.h>

#include "gramtex/array_file.hpp"
#include "gramtex/error.hpp"

namespace gramtex {
namespace {

Matrix floor_covariance(const Matrix& sigma, double floor) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma);
  if (eig.eigenvalues().minCoeff() >= floor) return sigma;
  const Vector clipped = eig.eigenvalues().cwiseMax(floor);
  Matrix out = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
  return (out + out.transpose()) * 0.5;
}

/// log N(x | mu, Sigma) for every column of `codes`.
Vector log_density(const Matrix& codes, const Vector& mean, const Matrix& cov) {
  const Eigen::LLT<Matrix> llt(cov);
  require(llt.info() == Eigen::Success, ErrorCode::numerical, "covariance is not positive definite");
  const Matrix centered = codes.colwise() - mean;
  const Matrix whitened = llt.matrixL().solve(centered);
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double d = static_cast<double>(codes.rows());
  const double constant = -0.5 * (d * std::log(2.0 * std::numbers::pi) + log_det);
  return (constant - 0.5 * whitened.colwise().squaredNorm().array()).matrix().transpose();
}

/// Fills responsibilities and returns the mean per-sample log-likelihood.
double e_step(const GmmModel& gmm, const Matrix& codes, Matrix& resp) {
  const auto k_count = gmm.n_components();
  const auto n = codes.cols();
  Matrix log_p(k_count, n);
  for (int k = 0; k < k_count; ++k) {
    log_p.row(k) = (std::log(gmm.weights(k)) + log_density(codes, gmm.means[k], gmm.covs[k]).array())
                       .matrix()
                       .transpose();
  }
  resp.resize(k_count, n);
  double total = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double top = log_p.col(j).maxCoeff();
    const double lse = top + std::log((log_p.col(j).array() - top).exp().sum());
    resp.col(j) = (log_p.col(j).array() - lse).exp();
    total += lse;
  }
  return total / static_cast<double>(n);
}

Matrix sample_covariance(const Matrix& codes) {
  const Vector mean = codes.rowwise().mean();
  const Matrix centered = codes.colwise() - mean;
  return centered * centered.transpose() / static_cast<double>(codes.cols());
}

/// Exact maximiser of the expected complete-data log-likelihood subject to
/// eigenvalues >= floor. Empty components are re-seeded from a random datum.
int m_step(GmmModel& gmm, const Matrix& codes, const Matrix& resp, std::mt19937_64& rng) {
  const auto n = codes.cols();
  const double min_mass = 1e-10 * static_cast<double>(n);
  int reseeded = 0;
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  for (int k = 0; k < gmm.n_components(); ++k) {
    const double mass = resp.row(k).sum();
    if (!(mass > min_mass)) {
      gmm.means[k] = codes.col(pick(rng));
      gmm.covs[k] = floor_covariance(sample_covariance(codes), gmm.floor);
      gmm.weights(k) = 1.0 / static_cast<double>(n);
      ++reseeded;
      continue;
    }
    const Vector mean = codes * resp.row(k).transpose() / mass;
    const Matrix centered = codes.colwise() - mean;
    Matrix cov = centered * resp.row(k).asDiagonal() * centered.transpose() / mass;
    cov = (cov + cov.transpose()) * 0.5;
    gmm.means[k] = mean;
    gmm.covs[k] = floor_covariance(cov, gmm.floor);
    gmm.weights(k) = mass / static_cast<double>(n);
  }
  gmm.weights /= gmm.weights.sum();
  return reseeded;
}

std::vector<Eigen::Index> kmeans_plus_plus(const Matrix& codes, int k_count, std::mt19937_64& rng) {
  const auto n = codes.cols();
  std::vector<Eigen::Index> centers;
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  centers.push_back(first(rng));
  Vector dist2 = (codes.colwise() - codes.col(centers[0])).colwise().squaredNorm().transpose();
  while (static_cast<int>(centers.size()) < k_count) {
    const double total = dist2.sum();
    Eigen::Index next = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      for (next = 0; next < n - 1; ++next) {
        target -= dist2(next);
        if (target < 0.0 && dist2(next) > 0.0) break;
      }
    } else {
      next = first(rng);
    }
    centers.push_back(next);
    dist2 = dist2.cwiseMin((codes.colwise() - codes.col(next)).colwise().squaredNorm().transpose());
  }
  return centers;
}

}  // namespace

GmmModel fit_gmm(const Matrix& codes, int n_components, std::uint64_t seed,
                 const GmmFitOptions& options, GmmFitReport* report) {
  require(n_components >= 1, ErrorCode::invalid_argument, "n_components must be >= 1");
  require(codes.cols() >= n_components, ErrorCode::insufficient_samples,
          "need at least " + std::to_string(n_components) + " codes, got " +
              std::to_string(codes.cols()));
  require(codes.rows() >= 1 && codes.allFinite(), ErrorCode::invalid_argument,
          "codes must be finite and non-empty");
  require(options.floor > 0.0, ErrorCode::invalid_argument, "covariance floor must be > 0");
  std::mt19937_64 rng(seed);
  const auto n = codes.cols();

  GmmModel gmm;
  gmm.floor = options.floor;
  gmm.weights = Vector::Constant(n_components, 1.0 / n_components);
  gmm.means.assign(static_cast<std::size_t>(n_components), Vector::Zero(codes.rows()));
  gmm.covs.assign(static_cast<std::size_t>(n_components), Matrix::Identity(codes.rows(), codes.rows()));

  // Hard assignment to the nearest k-means++ seed gives the first responsibilities.
  const auto centers = kmeans_plus_plus(codes, n_components, rng);
  Matrix resp = Matrix::Zero(n_components, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < n_components; ++k) {
      const double d = (codes.col(j) - codes.col(centers[static_cast<std::size_t>(k)])).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    resp(best, j) = 1.0;
  }
  GmmFitReport local;
  GmmFitReport& rep = report ? *report : local;
  rep = GmmFitReport{};
  rep.reseeded += m_step(gmm, codes, resp, rng);

  double previous = -std::numeric_limits<double>::infinity();
  for (int it = 0;; ++it) {
    const double ll = e_step(gmm, codes, resp);
    require(std::isfinite(ll), ErrorCode::numerical, "EM log-likelihood is not finite");
    rep.log_likelihood.push_back(ll);
    if (it > 0 && ll - previous < options.tolerance) {
      rep.converged = true;
      break;
    }
    if (it == options.max_iters) break;
    previous = ll;
    rep.reseeded += m_step(gmm, codes, resp, rng);
    rep.iterations = it + 1;
  }
  if (rep.reseeded > 0) spdlog::warn("EM re-seeded {} empty component(s)", rep.reseeded);
  return gmm;
}

double mean_log_likelihood(const GmmModel& gmm, const Matrix& codes) {
  Matrix resp;
  return e_step(gmm, codes, resp);
}

Matrix responsibilities(const GmmModel& gmm, const Matrix& codes) {
  Matrix resp;
  e_step(gmm, codes, resp);
  return resp;
}

Matrix symmetric_sqrt(const Matrix& sigma) {
  require(sigma.rows() == sigma.cols(), ErrorCode::dimension_mismatch, "covariance must be square");
  const Matrix off = sigma - Matrix(sigma.diagonal().asDiagonal());
  if (off.isZero(0.0)) {
    require(sigma.diagonal().minCoeff() >= 0.0, ErrorCode::numerical, "covariance is not PSD");
    return sigma.diagonal().cwiseSqrt().asDiagonal();
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma);
  const double scale = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  require(eig.eigenvalues().minCoeff() >= -1e-10 * scale, ErrorCode::numerical,
          "covariance is not PSD");
  Matrix s = eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
             eig.eigenvectors().transpose();
  return (s + s.transpose()) * 0.5;
}

AffineSampler to_affine_sampler(const GmmModel& gmm) {
  AffineSampler s;
  s.weights = gmm.weights;
  s.biases = gmm.means;
  for (const auto& cov : gmm.covs) s.scales.push_back(symmetric_sqrt(cov));
  return s;
}

AffineSampler standard_normal_sampler(int dim) {
  AffineSampler s;
  s.weights = Vector::Ones(1);
  s.biases.push_back(Vector::Zero(dim));
  s.scales.push_back(Matrix::Identity(dim, dim));
  return s;
}

Matrix sample(const AffineSampler& sampler, int n, std::mt19937_64& rng, std::vector<int>* components) {
  require(!sampler.biases.empty(), ErrorCode::invalid_argument, "sampler has no components");
  require(n >= 0, ErrorCode::invalid_argument, "sample count must be >= 0");
  const auto dim = sampler.biases.front().size();
  const int k_count = static_cast<int>(sampler.biases.size());
  std::discrete_distribution<int> pick(sampler.weights.data(), sampler.weights.data() + k_count);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(dim, n);
  if (components) components->assign(static_cast<std::size_t>(n), 0);
  Vector eps(dim);
  for (int j = 0; j < n; ++j) {
    const int k = k_count > 1 ? pick(rng) : 0;
    for (Eigen::Index i = 0; i < dim; ++i) eps(i) = normal(rng);
    out.col(j) = sampler.biases[static_cast<std::size_t>(k)] +
                 sampler.scales[static_cast<std::size_t>(k)] * eps;
    if (components) (*components)[static_cast<std::size_t>(j)] = k;
  }
  return out;
}

Matrix sample(const GmmModel& gmm, int n, std::mt19937_64& rng, std::vector<int>* components) {
  return sample(to_affine_sampler(gmm), n, rng, components);
}

int select_n_components(const Matrix& codes, std::span<const int> candidates, int folds,
                        std::uint64_t seed, const GmmFitOptions& options,
                        std::vector<double>* scores) {
  require(!candidates.empty(), ErrorCode::invalid_argument, "no candidate component counts");
  require(folds >= 2, ErrorCode::invalid_argument, "cross validation needs at least 2 folds");
  std::vector<int> sorted(candidates.begin(), candidates.end());
  std::sort(sorted.begin(), sorted.end());
  if (scores) scores->clear();
  if (sorted.size() == 1) {
    if (scores) scores->push_back(std::numeric_limits<double>::quiet_NaN());
    return sorted.front();
  }
  const auto n = codes.cols();
  require(n >= folds, ErrorCode::insufficient_samples, "fewer codes than folds");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Matrix> train_sets, held_sets;
  for (int f = 0; f < folds; ++f) {
    std::vector<Eigen::Index> train_idx, held_idx;
    for (std::size_t i = 0; i < order.size(); ++i) {
      (static_cast<int>(i % static_cast<std::size_t>(folds)) == f ? held_idx : train_idx).push_back(order[i]);
    }
    train_sets.push_back(codes(Eigen::all, train_idx));
    held_sets.push_back(codes(Eigen::all, held_idx));
  }
  require(std::all_of(train_sets.begin(), train_sets.end(),
                      [&](const Matrix& t) { return t.cols() >= sorted.back(); }),
          ErrorCode::insufficient_samples, "too few codes per fold for the largest candidate");

  int best = sorted.front();
  double best_score = -std::numeric_limits<double>::infinity();
  for (int k : sorted) {
    double total = 0.0;
    for (int f = 0; f < folds; ++f) {
      const GmmModel gmm = fit_gmm(train_sets[static_cast<std::size_t>(f)], k,
                                   seed + static_cast<std::uint64_t>(f), options);
      total += mean_log_likelihood(gmm, held_sets[static_cast<std::size_t>(f)]);
    }
    const double score = total / folds;
    if (scores) scores->push_back(score);
    if (score > best_score) {
      best_score = score;
      best = k;
    }
  }
  return best;
}

void save_gmm(const std::filesystem::path& path, const GmmModel& gmm) {
  auto file = ArrayFile::create(path);
  const auto k_count = static_cast<std::size_t>(gmm.n_components());
  const auto d = static_cast<std::size_t>(gmm.dim());
  file.write_vector("gmm/weights", gmm.weights, StoragePrecision::float64);
  Matrix means(static_cast<Eigen::Index>(k_count), static_cast<Eigen::Index>(d));
  for (std::size_t k = 0; k < k_count; ++k) means.row(static_cast<Eigen::Index>(k)) = gmm.means[k].transpose();
  file.write_matrix("gmm/means", means, StoragePrecision::float64);

  const AffineSampler sampler = to_affine_sampler(gmm);
  auto write_stack = [&](const std::string& name, const std::vector<Matrix>& mats) {
    std::vector<double> values;
    values.reserve(k_count * d * d);
    for (const auto& m : mats) {
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          values.push_back(m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        }
      }
    }
    const std::array<std::size_t, 3> shape{k_count, d, d};
    file.write(name, shape, values, StoragePrecision::float64);
  };
  write_stack("gmm/covs", gmm.covs);
  write_stack("gmm/sqrt_covs", sampler.scales);
  file.set_metadata({{"n_c", k_count}, {"d_e", d}, {"floor", gmm.floor}});
}

GmmModel load_gmm(const std::filesystem::path& path) {
  const auto file = ArrayFile::open(path);
  GmmModel gmm;
  try {
    gmm.floor = file.metadata().at("floor").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::io, path.string() + ": malformed GMM manifest: " + e.what());
  }
  gmm.weights = file.read_vector("gmm/weights");
  const Matrix means = file.read_matrix("gmm/means");
  const NamedArray covs = file.read("gmm/covs");
  const auto k_count = gmm.weights.size();
  const auto d = means.cols();
  require(means.rows() == k_count && covs.shape.size() == 3 &&
              covs.shape[0] == static_cast<std::size_t>(k_count) &&
              covs.shape[1] == static_cast<std::size_t>(d) && covs.shape[2] == static_cast<std::size_t>(d),
          ErrorCode::io, path.string() + ": inconsistent GMM arrays");
  for (Eigen::Index k = 0; k < k_count; ++k) {
    gmm.means.push_back(means.row(k).transpose());
    Matrix cov(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) {
        cov(i, j) = covs.values[static_cast<std::size_t>((k * d + i) * d + j)];
      }
    }
    gmm.covs.push_back(std::move(cov));
  }
  return gmm;
}

}  // namespace gramtex
