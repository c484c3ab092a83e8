#include "gramtex/evaluation.hpp"

#include <algorithm>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <spdlog/spdlog.h>

#include "gramtex/error.hpp"

namespace gramtex {
namespace {

Matrix symmetrize(const Matrix& m) { return (m + m.transpose()) * 0.5; }

/// Eigen-decomposition square root with negative eigenvalues clipped to zero.
Matrix clipped_sqrt(const Matrix& m, bool& clipped) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(m));
  const Vector& lambda = eig.eigenvalues();
  const double scale = std::max(1.0, lambda.cwiseAbs().maxCoeff());
  if (lambda.minCoeff() < -1e-10 * scale) clipped = true;
  return eig.eigenvectors() * lambda.cwiseMax(0.0).cwiseSqrt().asDiagonal() *
         eig.eigenvectors().transpose();
}

Matrix unbiased_covariance(const Matrix& features, const Vector& mean) {
  const Matrix centered = features.colwise() - mean;
  return symmetrize(centered * centered.transpose() / static_cast<double>(features.cols() - 1));
}

}  // namespace

PooledBackboneExtractor::PooledBackboneExtractor(std::shared_ptr<const Backbone> backbone,
                                                 std::vector<std::string> layer_ids)
    : backbone_(std::move(backbone)), layer_ids_(std::move(layer_ids)) {
  require(backbone_ != nullptr, ErrorCode::invalid_argument, "no backbone");
  require(!layer_ids_.empty(), ErrorCode::empty_layer_spec, "empty layer spec");
  for (const auto& id : layer_ids_) {
    const int s = backbone_->stage_index(id);
    require(s >= 0, ErrorCode::invalid_argument, "backbone has no layer " + id);
    stages_.push_back(s);
  }
}

std::string PooledBackboneExtractor::id() const {
  std::string out = "pooled:" + backbone_->identifier();
  for (const auto& id : layer_ids_) out += ":" + id;
  return out;
}

Vector PooledBackboneExtractor::features(const ImageRGB& image) const {
  const int n_stages = *std::max_element(stages_.begin(), stages_.end()) + 1;
  const Backbone::Act pixels = image.pixels;
  const auto outputs = backbone_->forward(pixels, image.height, image.width, n_stages);
  Eigen::Index total = 0;
  for (int s : stages_) total += outputs[static_cast<std::size_t>(s)].values.cols();
  Vector out(total);
  Eigen::Index offset = 0;
  for (int s : stages_) {
    const auto& values = outputs[static_cast<std::size_t>(s)].values;
    out.segment(offset, values.cols()) = values.cast<double>().colwise().mean().transpose();
    offset += values.cols();
  }
  return out;
}

double frechet_distance(const Vector& mean_a, const Matrix& cov_a, const Vector& mean_b,
                        const Matrix& cov_b, bool* clipped) {
  require(mean_a.size() == mean_b.size() && cov_a.rows() == mean_a.size() &&
              cov_b.rows() == mean_b.size() && cov_a.cols() == cov_a.rows() &&
              cov_b.cols() == cov_b.rows(),
          ErrorCode::dimension_mismatch, "Gaussian parameter shapes differ");
  bool was_clipped = false;
  const Matrix root_a = clipped_sqrt(cov_a, was_clipped);
  const Matrix inner = root_a * cov_b * root_a;
  const Matrix root_inner = clipped_sqrt(inner, was_clipped);
  if (was_clipped) spdlog::warn("FID: covariance product not PSD; clipped negative eigenvalues");
  if (clipped) *clipped = was_clipped;
  const double value =
      (mean_a - mean_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * root_inner.trace();
  return std::max(value, 0.0);
}

FidReport fid_from_features(const Matrix& features_a, const Matrix& features_b,
                            const std::string& extractor_id) {
  require(features_a.cols() >= 2 && features_b.cols() >= 2, ErrorCode::insufficient_samples,
          "insufficient samples: FID needs at least 2 images per set");
  require(features_a.rows() == features_b.rows(), ErrorCode::dimension_mismatch,
          "feature dimensions differ");
  FidReport report;
  report.extractor_id = extractor_id;
  report.n_a = static_cast<std::size_t>(features_a.cols());
  report.n_b = static_cast<std::size_t>(features_b.cols());
  const Vector mean_a = features_a.rowwise().mean();
  const Vector mean_b = features_b.rowwise().mean();
  report.score = frechet_distance(mean_a, unbiased_covariance(features_a, mean_a), mean_b,
                                  unbiased_covariance(features_b, mean_b), &report.clipped);
  return report;
}

FidReport compute_fid(std::span<const ImageRGB> set_a, std::span<const ImageRGB> set_b,
                      const FeatureExtractor& extractor) {
  require(set_a.size() >= 2 && set_b.size() >= 2, ErrorCode::insufficient_samples,
          "insufficient samples: FID needs at least 2 images per set");
  auto stack = [&](std::span<const ImageRGB> images) {
    Matrix out;
    for (std::size_t i = 0; i < images.size(); ++i) {
      const Vector f = extractor.features(images[i]);
      if (i == 0) out.resize(f.size(), static_cast<Eigen::Index>(images.size()));
      out.col(static_cast<Eigen::Index>(i)) = f;
    }
    return out;
  };
  return fid_from_features(stack(set_a), stack(set_b), extractor.id());
}

Embedding pca_embed(const Matrix& codes, const Matrix& samples, const GmmModel* gmm) {
  require(codes.cols() >= 2, ErrorCode::insufficient_samples, "PCA embedding needs at least 2 codes");
  require(samples.size() == 0 || samples.rows() == codes.rows(), ErrorCode::dimension_mismatch,
          "sample codes have the wrong length");
  const auto d = codes.rows();
  Embedding e;
  e.mean = codes.rowwise().mean();
  const Matrix centered = codes.colwise() - e.mean;
  const Matrix cov = symmetrize(centered * centered.transpose() / static_cast<double>(codes.cols() - 1));
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);

  e.axes = Matrix::Zero(d, 2);
  e.variances.setZero();
  const double top = std::max(eig.eigenvalues()(d - 1), 0.0);
  for (Eigen::Index j = 0; j < 2; ++j) {
    const Eigen::Index src = d - 1 - j;
    if (src < 0 || eig.eigenvalues()(src) <= 1e-12 * std::max(top, 1e-300)) {
      e.rank_deficient = true;
      continue;
    }
    Vector axis = eig.eigenvectors().col(src);
    // Sign convention: largest-magnitude entry positive, so runs are comparable.
    Eigen::Index arg = 0;
    axis.cwiseAbs().maxCoeff(&arg);
    if (axis(arg) < 0) axis = -axis;
    e.axes.col(j) = axis;
    e.variances(j) = eig.eigenvalues()(src);
  }
  if (e.rank_deficient) spdlog::warn("PCA embedding: codes span fewer than 2 directions; padded axes with zeros");

  e.code_coords = e.axes.transpose() * centered;
  if (samples.size() > 0) e.sample_coords = e.axes.transpose() * (samples.colwise() - e.mean);
  if (gmm) {
    for (int k = 0; k < gmm->n_components(); ++k) {
      EmbeddedEllipse el;
      el.center = e.axes.transpose() * (gmm->means[static_cast<std::size_t>(k)] - e.mean);
      el.covariance = e.axes.transpose() * gmm->covs[static_cast<std::size_t>(k)] * e.axes;
      e.ellipses.push_back(el);
    }
  }
  return e;
}

std::vector<Neighbor> nearest_neighbors(const GramSet& query, std::span<const GramSet> candidates,
                                        std::size_t k) {
  require(!candidates.empty(), ErrorCode::invalid_argument, "no candidates");
  std::vector<Neighbor> all;
  all.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) all.push_back({i, gram_distance(query, candidates[i])});
  std::stable_sort(all.begin(), all.end(),
                   [](const Neighbor& a, const Neighbor& b) { return a.distance < b.distance; });
  all.resize(std::min(k, all.size()));
  return all;
}

std::vector<Neighbor> nearest_neighbors(const Backbone& backbone, const LayerSpec& spec,
                                        const ImageRGB& query,
                                        std::span<const TextureSample> candidates, std::size_t k) {
  const GramSet q = extract_gram_set(backbone, with_full_mask(query), spec);
  std::vector<GramSet> grams;
  grams.reserve(candidates.size());
  for (const auto& c : candidates) grams.push_back(extract_gram_set(backbone, c, spec));
  return nearest_neighbors(q, grams, k);
}

std::map<std::string, int> family_coverage(std::span<const GramSet> generated,
                                           std::span<const GramSet> real,
                                           std::span<const std::string> real_families) {
  require(real.size() == real_families.size(), ErrorCode::dimension_mismatch,
          "one family label per real Gram set expected");
  std::map<std::string, int> counts;
  for (const auto& f : real_families) counts.emplace(f, 0);
  for (const auto& g : generated) {
    const auto nn = nearest_neighbors(g, real, 1);
    ++counts[real_families[nn.front().index]];
  }
  return counts;
}

}  // namespace gramtex
