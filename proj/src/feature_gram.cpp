#include "gramtex/feature_gram.hpp"

#include "gramtex/array_file.hpp"
#include "gramtex/error.hpp"

namespace gramtex {

void validate(const TextureSample& sample) {
  const auto& img = sample.image;
  require(img.height > 0 && img.width > 0 &&
              img.pixels.rows() == static_cast<Eigen::Index>(img.height) * img.width &&
              img.pixels.cols() == 3,
          ErrorCode::dimension_mismatch, "malformed image");
  require(img.pixels.allFinite() && img.pixels.minCoeff() >= 0.0f && img.pixels.maxCoeff() <= 1.0f,
          ErrorCode::invalid_argument, "image values must lie in [0,1]");
  require(sample.mask.height == img.height && sample.mask.width == img.width,
          ErrorCode::dimension_mismatch, "mask and image sizes differ");
  require(sample.mask.count() > 0, ErrorCode::empty_mask_region, "mask has no texture region");
}

TextureSample with_full_mask(ImageRGB image) {
  TextureSample s;
  s.mask = BinaryGrid(image.height, image.width, 1);
  s.image = std::move(image);
  return s;
}

std::vector<int> GramSet::channel_counts() const {
  std::vector<int> out;
  for (const auto& g : grams) out.push_back(static_cast<int>(g.rows()));
  return out;
}

void validate(const GramSet& grams) {
  require(grams.layer_ids.size() == grams.grams.size(), ErrorCode::dimension_mismatch,
          "gram set layer ids do not match matrices");
  for (std::size_t l = 0; l < grams.size(); ++l) {
    const Matrix& g = grams.grams[l];
    const std::string& id = grams.layer_ids[l];
    require(g.rows() == g.cols(), ErrorCode::dimension_mismatch, id + ": gram is not square");
    require(g.allFinite(), ErrorCode::numerical, id + ": non-finite gram entry");
    require(g == g.transpose(), ErrorCode::numerical, id + ": gram is not symmetric");
    require((g.diagonal().array() >= 0).all(), ErrorCode::numerical, id + ": negative diagonal");
  }
}

namespace {

// Maps each spec layer to a backbone stage; returns the deepest stage count.
std::vector<int> resolve_layers(const Backbone& backbone, const LayerSpec& spec) {
  validate(spec);
  std::vector<int> index;
  for (const auto& layer : spec.layers) {
    const int s = backbone.stage_index(layer.layer_id);
    require(s >= 0, ErrorCode::invalid_argument,
            "layer " + layer.layer_id + " is not produced by backbone " + backbone.identifier());
    const auto& stage = backbone.stages()[static_cast<std::size_t>(s)];
    require(stage.def.out_channels == layer.channels && stage.downsample == layer.downsample,
            ErrorCode::dimension_mismatch,
            "layer " + layer.layer_id + " does not match the backbone definition");
    if (!index.empty()) {
      require(s > index.back(), ErrorCode::invalid_argument, "layer spec out of backbone order");
    }
    index.push_back(s);
  }
  return index;
}

}  // namespace

std::vector<FeatureMap> extract_features(const Backbone& backbone, const TextureSample& sample,
                                         const LayerSpec& spec) {
  if (spec.layers.empty()) fail(ErrorCode::empty_layer_spec, "empty layer spec");
  validate(sample);
  const std::vector<int> index = resolve_layers(backbone, spec);
  const auto& img = sample.image;
  Backbone::Act pixels = img.pixels;
  const auto outputs = backbone.forward(pixels, img.height, img.width, index.back() + 1);
  std::vector<FeatureMap> maps;
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto& out = outputs[static_cast<std::size_t>(index[i])];
    maps.push_back({spec.layers[i].layer_id, out.height, out.width, out.values.cast<double>()});
  }
  return maps;
}

BinaryGrid downsample_mask(const BinaryGrid& mask, int factor) {
  require(factor >= 1, ErrorCode::invalid_argument, "downsample factor must be positive");
  const int oh = (mask.height + factor - 1) / factor;
  const int ow = (mask.width + factor - 1) / factor;
  BinaryGrid out(oh, ow);
  const long block = static_cast<long>(factor) * factor;
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      long ones = 0;
      for (int dy = 0; dy < factor; ++dy) {
        const int sy = y * factor + dy;
        if (sy >= mask.height) break;
        for (int dx = 0; dx < factor; ++dx) {
          const int sx = x * factor + dx;
          if (sx >= mask.width) break;
          ones += mask.at(sy, sx) != 0;
        }
      }
      out.at(y, x) = 2 * ones > block ? 1 : 0;
    }
  }
  return out;
}

MaskPyramid build_mask_pyramid(const BinaryGrid& mask, const LayerSpec& spec) {
  MaskPyramid p;
  for (const auto& layer : spec.layers) {
    p.masks.push_back(downsample_mask(mask, layer.downsample));
    p.cardinalities.push_back(p.masks.back().count());
  }
  return p;
}

Matrix normalized_gram(const RowMatrix& rows) {
  const auto c = rows.cols();
  Matrix g = Matrix::Zero(c, c);
  if (rows.rows() == 0) return g;
  g.selfadjointView<Eigen::Lower>().rankUpdate(rows.transpose(), 1.0 / static_cast<double>(rows.rows()));
  g.triangularView<Eigen::StrictlyUpper>() = g.transpose();
  return g;
}

Matrix compute_gram(const FeatureMap& fm, const BinaryGrid& mask_l) {
  require(mask_l.height == fm.height && mask_l.width == fm.width, ErrorCode::dimension_mismatch,
          fm.layer_id + ": mask and feature map sizes differ");
  require(fm.activations.rows() == static_cast<Eigen::Index>(fm.height) * fm.width,
          ErrorCode::dimension_mismatch, fm.layer_id + ": malformed feature map");
  const std::size_t n = mask_l.count();
  if (n == 0) throw EmptyMaskRegion(fm.layer_id);
  RowMatrix rows(static_cast<Eigen::Index>(n), fm.activations.cols());
  Eigen::Index r = 0;
  for (std::size_t k = 0; k < mask_l.cells.size(); ++k) {
    if (mask_l.cells[k]) rows.row(r++) = fm.activations.row(static_cast<Eigen::Index>(k));
  }
  return normalized_gram(rows);
}

GramSet extract_gram_set(const Backbone& backbone, const TextureSample& sample,
                         const LayerSpec& spec) {
  const auto maps = extract_features(backbone, sample, spec);
  const MaskPyramid pyramid = build_mask_pyramid(sample.mask, spec);
  GramSet out;
  out.backbone_id = backbone.identifier();
  for (std::size_t l = 0; l < maps.size(); ++l) {
    out.layer_ids.push_back(maps[l].layer_id);
    out.grams.push_back(compute_gram(maps[l], pyramid.masks[l]));
  }
  return out;
}

void save_gram_set(const std::filesystem::path& path, const GramSet& grams) {
  ArrayFile file = ArrayFile::create(path);
  for (std::size_t l = 0; l < grams.size(); ++l) {
    file.write_matrix("gram/" + grams.layer_ids[l], grams.grams[l], StoragePrecision::float32);
  }
  file.set_metadata({{"backbone_id", grams.backbone_id},
                     {"layer_ids", grams.layer_ids},
                     {"channel_counts", grams.channel_counts()},
                     {"normalization", "per-mask-cardinality"}});
}

GramSet load_gram_set(const std::filesystem::path& path) {
  ArrayFile file = ArrayFile::open(path);
  const nlohmann::json meta = file.metadata();
  GramSet out;
  try {
    out.backbone_id = meta.at("backbone_id").get<std::string>();
    out.layer_ids = meta.at("layer_ids").get<std::vector<std::string>>();
    const auto channels = meta.at("channel_counts").get<std::vector<int>>();
    require(channels.size() == out.layer_ids.size(), ErrorCode::io,
            path.string() + ": inconsistent gram metadata");
    for (std::size_t l = 0; l < out.layer_ids.size(); ++l) {
      Matrix g = file.read_matrix("gram/" + out.layer_ids[l]);
      require(g.rows() == channels[l] && g.cols() == channels[l], ErrorCode::io,
              path.string() + ": gram shape does not match metadata");
      out.grams.push_back(std::move(g));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::io, path.string() + ": malformed gram metadata: " + e.what());
  }
  return out;
}

double gram_distance(const GramSet& a, const GramSet& b) {
  require(a.size() == b.size(), ErrorCode::dimension_mismatch, "gram sets differ in layer count");
  double d = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    require(a.grams[l].rows() == b.grams[l].rows(), ErrorCode::dimension_mismatch,
            "gram sets differ in layer width");
    d += (a.grams[l] - b.grams[l]).norm();
  }
  return d;
}

}  // namespace gramtex
