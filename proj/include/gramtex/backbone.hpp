#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace gramtex {

/// One convolution stage: optional 2x2 average pool, k x k conv (zero
/// padded, stride 1), ReLU. The stage output is the feature layer.
struct StageDefinition {
  std::string layer_id;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  bool pool_before = false;
};

struct BackboneDefinition {
  std::string name;
  std::vector<StageDefinition> stages;
  float input_offset = 0.5f;  // subtracted from every pixel before stage 1
};

/// Five stages at strides 1,2,4,8,16 with widths 64,128,256,512,512.
BackboneDefinition vgg_style_definition();
/// Three narrow stages (8,16,32 channels) for desk-scale runs.
BackboneDefinition desk_definition();
/// Looks up a named preset ("vgg5" or "desk").
BackboneDefinition definition_by_name(const std::string& name);

struct LayerEntry {
  std::string layer_id;
  int channels = 0;
  int downsample = 1;

  friend bool operator==(const LayerEntry&, const LayerEntry&) = default;
};

struct LayerSpec {
  std::string backbone_id;
  std::vector<LayerEntry> layers;

  std::size_t size() const { return layers.size(); }
  std::vector<int> channel_counts() const;
  std::vector<std::string> layer_ids() const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Validates layer-spec invariants (non-empty, downsample non-decreasing).
void validate(const LayerSpec& spec);

/// Frozen convolutional feature extractor. Weights are either read from an
/// array file or drawn once from a seeded He-normal initialisation; they are
/// never modified after construction, so const methods are reentrant.
template <typename T>
class ConvBackbone {
 public:
  using Act = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Weights = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Bias = Eigen::Matrix<T, 1, Eigen::Dynamic>;

  struct Stage {
    StageDefinition def;
    Weights weight;  // (kernel*kernel*in) x out, rows ordered (ky, kx, c)
    Bias bias;
    int downsample = 1;
  };

  /// Post-ReLU output of one stage, positions x channels.
  struct Activation {
    int height = 0;
    int width = 0;
    Act values;
  };

  ConvBackbone(const BackboneDefinition& definition, std::uint64_t seed,
               bool with_bias = false);

  static ConvBackbone load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  const std::string& identifier() const { return identifier_; }
  const BackboneDefinition& definition() const { return definition_; }
  const std::vector<Stage>& stages() const { return stages_; }
  std::vector<Stage>& mutable_stages() { return stages_; }

  /// Layer spec covering every stage output.
  LayerSpec full_layer_spec() const;
  int stage_index(const std::string& layer_id) const;  // -1 if absent

  /// Throws unless height/width are usable for the first `n_stages` stages.
  void check_input_size(int height, int width, int n_stages) const;

  /// Runs the first `n_stages` stages on pixels ((h*w) x 3, values in [0,1]).
  std::vector<Activation> forward(const Act& pixels, int height, int width,
                                  int n_stages) const;

  /// Back-propagates per-stage output gradients to the input pixels.
  /// `outputs` must come from forward(); empty gradient entries mean zero.
  Act backward(const std::vector<Activation>& outputs, int height, int width,
               const std::vector<Act>& output_grads) const;

 private:
  ConvBackbone() = default;

  std::string identifier_;
  BackboneDefinition definition_;
  std::vector<Stage> stages_;
};

extern template class ConvBackbone<float>;
extern template class ConvBackbone<double>;

using Backbone = ConvBackbone<float>;

/// Builds a backbone from a CLI-style reference: a preset name with an
/// optional "@seed", or a path to a saved weights file.
Backbone make_backbone(const std::string& reference);

}  // namespace gramtex
