#include "gramtex/backbone.hpp"

#include <cmath>
#include <random>

#include "gramtex/array_file.hpp"
#include "gramtex/error.hpp"

namespace gramtex {

BackboneDefinition vgg_style_definition() {
  BackboneDefinition def;
  def.name = "vgg5";
  def.stages = {
      {"relu1_1", 3, 64, 3, false},
      {"relu2_1", 64, 128, 3, true},
      {"relu3_1", 128, 256, 3, true},
      {"relu4_1", 256, 512, 3, true},
      {"relu5_1", 512, 512, 3, true},
  };
  return def;
}

BackboneDefinition desk_definition() {
  BackboneDefinition def;
  def.name = "desk";
  def.stages = {
      {"relu1_1", 3, 8, 3, false},
      {"relu2_1", 8, 16, 3, true},
      {"relu3_1", 16, 32, 3, true},
  };
  return def;
}

BackboneDefinition definition_by_name(const std::string& name) {
  if (name == "vgg5") return vgg_style_definition();
  if (name == "desk") return desk_definition();
  fail(ErrorCode::backbone_weights, "unknown backbone preset '" + name + "'");
}

std::vector<int> LayerSpec::channel_counts() const {
  std::vector<int> out;
  for (const auto& l : layers) out.push_back(l.channels);
  return out;
}

std::vector<std::string> LayerSpec::layer_ids() const {
  std::vector<std::string> out;
  for (const auto& l : layers) out.push_back(l.layer_id);
  return out;
}

void validate(const LayerSpec& spec) {
  require(!spec.layers.empty(), ErrorCode::empty_layer_spec, "empty layer spec");
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    require(spec.layers[i].channels >= 0 && spec.layers[i].downsample >= 1,
            ErrorCode::invalid_argument, "invalid layer entry " + spec.layers[i].layer_id);
    if (i > 0) {
      require(spec.layers[i].downsample >= spec.layers[i - 1].downsample,
              ErrorCode::invalid_argument, "layer downsample factors must be non-decreasing");
    }
  }
}

namespace {

template <typename Act>
Act average_pool(const Act& in, int h, int w) {
  const int oh = h / 2;
  const int ow = w / 2;
  Act out(static_cast<Eigen::Index>(oh) * ow, in.cols());
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      const auto r = static_cast<Eigen::Index>(2 * y) * w + 2 * x;
      out.row(static_cast<Eigen::Index>(y) * ow + x) =
          (in.row(r) + in.row(r + 1) + in.row(r + w) + in.row(r + w + 1)) *
          typename Act::Scalar(0.25);
    }
  }
  return out;
}

template <typename Act>
Act average_unpool(const Act& grad, int h, int w) {
  const int oh = h / 2;
  const int ow = w / 2;
  Act out = Act::Zero(static_cast<Eigen::Index>(h) * w, grad.cols());
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      const auto g = grad.row(static_cast<Eigen::Index>(y) * ow + x) * typename Act::Scalar(0.25);
      const auto r = static_cast<Eigen::Index>(2 * y) * w + 2 * x;
      out.row(r) = g;
      out.row(r + 1) = g;
      out.row(r + w) = g;
      out.row(r + w + 1) = g;
    }
  }
  return out;
}

// Patch matrix: row per output position, columns (ky, kx, c).
template <typename Act>
Act im2col(const Act& in, int h, int w, int k) {
  const auto c = in.cols();
  const int pad = k / 2;
  Act cols = Act::Zero(static_cast<Eigen::Index>(h) * w, k * k * c);
  for (int ky = 0; ky < k; ++ky) {
    for (int kx = 0; kx < k; ++kx) {
      const auto col0 = (static_cast<Eigen::Index>(ky) * k + kx) * c;
      for (int y = 0; y < h; ++y) {
        const int sy = y + ky - pad;
        if (sy < 0 || sy >= h) continue;
        const int x0 = std::max(0, pad - kx);
        const int x1 = std::min(w, w + pad - kx);
        for (int x = x0; x < x1; ++x) {
          cols.row(static_cast<Eigen::Index>(y) * w + x).segment(col0, c) =
              in.row(static_cast<Eigen::Index>(sy) * w + (x + kx - pad));
        }
      }
    }
  }
  return cols;
}

template <typename Act>
Act col2im(const Act& cols, int h, int w, int k, Eigen::Index c) {
  const int pad = k / 2;
  Act out = Act::Zero(static_cast<Eigen::Index>(h) * w, c);
  for (int ky = 0; ky < k; ++ky) {
    for (int kx = 0; kx < k; ++kx) {
      const auto col0 = (static_cast<Eigen::Index>(ky) * k + kx) * c;
      for (int y = 0; y < h; ++y) {
        const int sy = y + ky - pad;
        if (sy < 0 || sy >= h) continue;
        const int x0 = std::max(0, pad - kx);
        const int x1 = std::min(w, w + pad - kx);
        for (int x = x0; x < x1; ++x) {
          out.row(static_cast<Eigen::Index>(sy) * w + (x + kx - pad)) +=
              cols.row(static_cast<Eigen::Index>(y) * w + x).segment(col0, c);
        }
      }
    }
  }
  return out;
}

std::string preset_identifier(const std::string& name, std::uint64_t seed) {
  return name + "@" + std::to_string(seed);
}

}  // namespace

template <typename T>
ConvBackbone<T>::ConvBackbone(const BackboneDefinition& definition, std::uint64_t seed,
                              bool with_bias)
    : identifier_(preset_identifier(definition.name, seed)), definition_(definition) {
  require(!definition.stages.empty(), ErrorCode::backbone_weights, "backbone has no stages");
  std::mt19937_64 rng(seed);
  int downsample = 1;
  for (std::size_t s = 0; s < definition.stages.size(); ++s) {
    const auto& d = definition.stages[s];
    require(d.kernel >= 1 && d.kernel % 2 == 1, ErrorCode::backbone_weights,
            "kernel size must be odd");
    if (s > 0) {
      require(d.in_channels == definition.stages[s - 1].out_channels, ErrorCode::backbone_weights,
              "stage " + d.layer_id + " input width does not match previous stage");
    } else {
      require(d.in_channels == 3, ErrorCode::backbone_weights, "first stage must read RGB");
    }
    if (d.pool_before) downsample *= 2;
    Stage stage;
    stage.def = d;
    stage.downsample = downsample;
    const int fan_in = d.kernel * d.kernel * d.in_channels;
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
    stage.weight.resize(fan_in, d.out_channels);
    for (Eigen::Index i = 0; i < stage.weight.size(); ++i) {
      stage.weight.data()[i] = static_cast<T>(normal(rng));
    }
    stage.bias = Bias::Zero(d.out_channels);
    if (with_bias) {
      std::normal_distribution<double> small(0.0, 0.1);
      for (Eigen::Index i = 0; i < stage.bias.size(); ++i) stage.bias(i) = static_cast<T>(small(rng));
    }
    stages_.push_back(std::move(stage));
  }
}

template <typename T>
ConvBackbone<T> ConvBackbone<T>::load(const std::filesystem::path& path) {
  ArrayFile file = [&] {
    try {
      return ArrayFile::open(path);
    } catch (const Error& e) {
      fail(ErrorCode::backbone_weights, std::string("backbone weights: ") + e.what());
    }
  }();
  ConvBackbone<T> net;
  try {
    const nlohmann::json meta = file.metadata();
    net.identifier_ = meta.at("backbone_id").get<std::string>();
    net.definition_.name = meta.at("name").get<std::string>();
    net.definition_.input_offset = meta.at("input_offset").get<float>();
    int downsample = 1;
    for (const auto& js : meta.at("stages")) {
      StageDefinition d;
      d.layer_id = js.at("layer_id").get<std::string>();
      d.in_channels = js.at("in_channels").get<int>();
      d.out_channels = js.at("out_channels").get<int>();
      d.kernel = js.at("kernel").get<int>();
      d.pool_before = js.at("pool_before").get<bool>();
      if (d.pool_before) downsample *= 2;
      const Matrix w = file.read_matrix("backbone/" + d.layer_id + "/weight");
      const Vector b = file.read_vector("backbone/" + d.layer_id + "/bias");
      require(w.rows() == d.kernel * d.kernel * d.in_channels && w.cols() == d.out_channels &&
                  b.size() == d.out_channels,
              ErrorCode::backbone_weights, "weight shape mismatch at " + d.layer_id);
      require(w.allFinite() && b.allFinite(), ErrorCode::backbone_weights,
              "non-finite weights at " + d.layer_id);
      Stage stage;
      stage.def = d;
      stage.downsample = downsample;
      stage.weight = w.cast<T>();
      stage.bias = b.transpose().cast<T>();
      net.definition_.stages.push_back(d);
      net.stages_.push_back(std::move(stage));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::backbone_weights, "corrupt backbone metadata: " + std::string(e.what()));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::backbone_weights) throw;
    fail(ErrorCode::backbone_weights, std::string("corrupt backbone weights: ") + e.what());
  }
  require(!net.stages_.empty(), ErrorCode::backbone_weights, "backbone file has no stages");
  return net;
}

template <typename T>
void ConvBackbone<T>::save(const std::filesystem::path& path) const {
  ArrayFile file = ArrayFile::create(path);
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : stages_) {
    stages.push_back({{"layer_id", s.def.layer_id},
                      {"in_channels", s.def.in_channels},
                      {"out_channels", s.def.out_channels},
                      {"kernel", s.def.kernel},
                      {"pool_before", s.def.pool_before}});
    file.write_matrix("backbone/" + s.def.layer_id + "/weight", s.weight.template cast<double>(),
                      StoragePrecision::float64);
    file.write_vector("backbone/" + s.def.layer_id + "/bias",
                      s.bias.transpose().template cast<double>(), StoragePrecision::float64);
  }
  file.set_metadata({{"backbone_id", identifier_},
                     {"name", definition_.name},
                     {"input_offset", definition_.input_offset},
                     {"stages", stages}});
}

template <typename T>
LayerSpec ConvBackbone<T>::full_layer_spec() const {
  LayerSpec spec;
  spec.backbone_id = identifier_;
  for (const auto& s : stages_) spec.layers.push_back({s.def.layer_id, s.def.out_channels, s.downsample});
  return spec;
}

template <typename T>
int ConvBackbone<T>::stage_index(const std::string& layer_id) const {
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    if (stages_[i].def.layer_id == layer_id) return static_cast<int>(i);
  }
  return -1;
}

template <typename T>
void ConvBackbone<T>::check_input_size(int height, int width, int n_stages) const {
  require(n_stages >= 1 && n_stages <= static_cast<int>(stages_.size()),
          ErrorCode::invalid_argument, "invalid stage count");
  const int factor = stages_[static_cast<std::size_t>(n_stages - 1)].downsample;
  require(height >= factor && width >= factor && height % factor == 0 && width % factor == 0,
          ErrorCode::image_too_small,
          "image " + std::to_string(height) + "x" + std::to_string(width) +
              " is incompatible with stride " + std::to_string(factor) + " of layer " +
              stages_[static_cast<std::size_t>(n_stages - 1)].def.layer_id);
}

template <typename T>
std::vector<typename ConvBackbone<T>::Activation> ConvBackbone<T>::forward(
    const Act& pixels, int height, int width, int n_stages) const {
  check_input_size(height, width, n_stages);
  require(pixels.rows() == static_cast<Eigen::Index>(height) * width && pixels.cols() == 3,
          ErrorCode::dimension_mismatch, "pixel matrix does not match image size");
  std::vector<Activation> outputs;
  outputs.reserve(static_cast<std::size_t>(n_stages));
  Act current = pixels.array() - static_cast<T>(definition_.input_offset);
  int h = height;
  int w = width;
  for (int s = 0; s < n_stages; ++s) {
    const Stage& stage = stages_[static_cast<std::size_t>(s)];
    if (stage.def.pool_before) {
      current = average_pool(current, h, w);
      h /= 2;
      w /= 2;
    }
    Act cols = im2col(current, h, w, stage.def.kernel);
    Act pre = cols * stage.weight;
    pre.rowwise() += stage.bias;
    Activation out;
    out.height = h;
    out.width = w;
    out.values = pre.cwiseMax(T(0));
    current = out.values;
    outputs.push_back(std::move(out));
  }
  return outputs;
}

template <typename T>
typename ConvBackbone<T>::Act ConvBackbone<T>::backward(const std::vector<Activation>& outputs,
                                                       int height, int width,
                                                       const std::vector<Act>& output_grads) const {
  const auto n = static_cast<int>(outputs.size());
  require(static_cast<int>(output_grads.size()) == n, ErrorCode::dimension_mismatch,
          "one gradient entry per stage output expected");
  Act grad;  // gradient w.r.t. the output of stage s (accumulated)
  for (int s = n - 1; s >= 0; --s) {
    const Stage& stage = stages_[static_cast<std::size_t>(s)];
    const Activation& out = outputs[static_cast<std::size_t>(s)];
    const Act& direct = output_grads[static_cast<std::size_t>(s)];
    if (grad.size() == 0) {
      grad = direct.size() ? direct : Act::Zero(out.values.rows(), out.values.cols());
    } else if (direct.size()) {
      grad += direct;
    }
    // ReLU: pass gradient where the output is active.
    Act d_pre = (out.values.array() > T(0)).select(grad, T(0));
    Act d_cols = d_pre * stage.weight.transpose();
    Act d_in = col2im(d_cols, out.height, out.width, stage.def.kernel, stage.def.in_channels);
    if (stage.def.pool_before) d_in = average_unpool(d_in, out.height * 2, out.width * 2);
    grad = std::move(d_in);
  }
  if (grad.size() == 0) grad = Act::Zero(static_cast<Eigen::Index>(height) * width, 3);
  return grad;
}

template class ConvBackbone<float>;
template class ConvBackbone<double>;

Backbone make_backbone(const std::string& reference) {
  if (std::filesystem::exists(reference) && std::filesystem::is_regular_file(reference)) {
    return Backbone::load(reference);
  }
  const auto at = reference.find('@');
  const std::string name = reference.substr(0, at);
  std::uint64_t seed = 0;
  if (at != std::string::npos) {
    try {
      seed = std::stoull(reference.substr(at + 1));
    } catch (const std::exception&) {
      fail(ErrorCode::backbone_weights, "bad backbone seed in '" + reference + "'");
    }
  }
  return Backbone(definition_by_name(name), seed);
}

}  // namespace gramtex
