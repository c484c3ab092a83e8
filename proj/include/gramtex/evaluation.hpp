#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gramtex/backbone.hpp"
#include "gramtex/feature_gram.hpp"
#include "gramtex/latent_gmm.hpp"
#include "gramtex/types.hpp"

namespace gramtex {

// ---- FID ------------------------------------------------------------------------

/// Maps an image to a fixed-length feature vector.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string id() const = 0;
  virtual Vector features(const ImageRGB& image) const = 0;
};

/// Spatially mean-pooled activations of the chosen backbone layers,
/// concatenated in layer order.
class PooledBackboneExtractor : public FeatureExtractor {
 public:
  PooledBackboneExtractor(std::shared_ptr<const Backbone> backbone, std::vector<std::string> layer_ids);

  std::string id() const override;
  Vector features(const ImageRGB& image) const override;

 private:
  std::shared_ptr<const Backbone> backbone_;
  std::vector<std::string> layer_ids_;
  std::vector<int> stages_;
};

struct FidReport {
  double score = 0.0;
  std::string extractor_id;
  std::size_t n_a = 0;
  std::size_t n_b = 0;
  bool clipped = false;  // negative eigenvalues were clipped in the matrix root
};

/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^{1/2} S_b S_a^{1/2})^{1/2}).
double frechet_distance(const Vector& mean_a, const Matrix& cov_a, const Vector& mean_b,
                        const Matrix& cov_b, bool* clipped = nullptr);

/// FID between two feature sets (columns are samples), unbiased covariances.
FidReport fid_from_features(const Matrix& features_a, const Matrix& features_b,
                            const std::string& extractor_id = "features");

FidReport compute_fid(std::span<const ImageRGB> set_a, std::span<const ImageRGB> set_b,
                      const FeatureExtractor& extractor);

// ---- Latent embedding -----------------------------------------------------------

struct EmbeddedEllipse {
  Eigen::Vector2d center;
  Eigen::Matrix2d covariance;  // projected component covariance
};

struct Embedding {
  Vector mean;                     // centre of the real codes
  Matrix axes;                     // d x 2 principal directions (zero columns if degenerate)
  Eigen::Vector2d variances;       // variance along each axis
  Matrix code_coords;              // 2 x N
  Matrix sample_coords;            // 2 x M
  std::vector<EmbeddedEllipse> ellipses;
  bool rank_deficient = false;
};

/// Top-2 PCA fitted on `codes`; `samples` and the GMM components (if given)
/// are projected into the same frame. Columns are codes.
Embedding pca_embed(const Matrix& codes, const Matrix& samples, const GmmModel* gmm = nullptr);

// ---- Retrieval ------------------------------------------------------------------

struct Neighbor {
  std::size_t index = 0;
  double distance = 0.0;
};

/// The k closest candidates by gram_distance, ascending; ties by index.
std::vector<Neighbor> nearest_neighbors(const GramSet& query, std::span<const GramSet> candidates,
                                        std::size_t k);

/// Image-level retrieval: Gram sets of query and candidates are extracted
/// with `backbone` over `spec` (full masks for the query).
std::vector<Neighbor> nearest_neighbors(const Backbone& backbone, const LayerSpec& spec,
                                        const ImageRGB& query,
                                        std::span<const TextureSample> candidates, std::size_t k);

/// For each generated Gram set, the family label of its nearest real Gram
/// set; returns counts per family.
std::map<std::string, int> family_coverage(std::span<const GramSet> generated,
                                           std::span<const GramSet> real,
                                           std::span<const std::string> real_families);

}  // namespace gramtex
