#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gramtex/backbone.hpp"
#include "gramtex/types.hpp"

namespace gramtex {

struct FeatureMap {
  std::string layer_id;
  int height = 0;
  int width = 0;
  Matrix activations;  // positions x channels
};

struct MaskPyramid {
  std::vector<BinaryGrid> masks;
  std::vector<std::size_t> cardinalities;
};

/// Ordered per-layer Gram matrices of one texture.
struct GramSet {
  std::string backbone_id;
  std::vector<std::string> layer_ids;
  std::vector<Matrix> grams;

  std::size_t size() const { return grams.size(); }
  std::vector<int> channel_counts() const;
};

/// Checks symmetry, finiteness and non-negative diagonals.
void validate(const GramSet& grams);

std::vector<FeatureMap> extract_features(const Backbone& backbone, const TextureSample& sample,
                                         const LayerSpec& spec);

/// Majority-rule downsampling: a cell is set iff strictly more than half of
/// its factor x factor block is set. Blocks past the border are zero padded.
BinaryGrid downsample_mask(const BinaryGrid& mask, int factor);

MaskPyramid build_mask_pyramid(const BinaryGrid& mask, const LayerSpec& spec);

/// (1/n) X^T X for the n rows of X, exactly symmetric.
Matrix normalized_gram(const RowMatrix& rows);

/// Gram over the positions where mask_l is set, divided by their count.
/// Throws EmptyMaskRegion (with the feature map's layer id) if the mask is empty.
Matrix compute_gram(const FeatureMap& fm, const BinaryGrid& mask_l);

GramSet extract_gram_set(const Backbone& backbone, const TextureSample& sample,
                         const LayerSpec& spec);

/// Writes `gram/<layer_id>` arrays (float32) and the metadata record.
void save_gram_set(const std::filesystem::path& path, const GramSet& grams);
GramSet load_gram_set(const std::filesystem::path& path);

/// Sum over layers of the Frobenius distance between matching Gram matrices.
double gram_distance(const GramSet& a, const GramSet& b);

}  // namespace gramtex
