#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gramtex/backbone.hpp"
#include "gramtex/feature_gram.hpp"
#include "gramtex/gram_transform.hpp"
#include "gramtex/nn.hpp"

namespace gramtex {

enum class Architecture { recursive, mlp };

struct ModelConfig {
  LayerSpec layers;
  int latent_dim = 128;        // d_e
  int hidden_dim = 512;        // d_r, recursive-unit width
  int transform_dim = 128;     // d_v, width of a transformed Gram vector
  int unit_depth = 2;          // r, affine layers per recursive unit
  int discriminator_width = 512;
  int discriminator_layers = 4;
  int basis_multiplier = 8;    // D = basis_multiplier * C
  TransformVariant transform = TransformVariant::gram2vec;
  Architecture architecture = Architecture::recursive;
  bool tie_bases = true;       // V2G reuses the G2V projection vectors of its layer
  bool share_units = true;     // one recursive unit per direction, applied at every level

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Default configuration for a layer spec (d_e=128, d_r=512, r=2, D=8C).
ModelConfig default_model_config(const LayerSpec& layers);

struct RecursiveUnitParams {
  std::vector<Affine> layers;  // first: (d_r + d_v) -> d_r, rest d_r -> d_r
};

struct EncoderParams {
  std::vector<G2VParams> g2v;          // gram2vec transforms, one per layer
  std::vector<Matrix> dense;           // dense_fc transforms, d_v x C^2
  std::vector<RecursiveUnitParams> units;
  Vector initial_hidden;               // h^(0)
  std::vector<Affine> trunk;           // mlp architecture only
  Affine head;                         // -> d_e, no output activation
};

struct DecoderParams {
  Affine head;                         // d_e -> d_r
  std::vector<RecursiveUnitParams> units;
  std::vector<Affine> branches;        // d_r -> d_v, one per layer
  std::vector<Affine> trunk;           // mlp architecture only
  std::vector<V2GParams> v2g;          // basis left empty when bases are tied
  std::vector<Matrix> dense;           // dense_fc transforms, C^2 x d_v
};

struct DiscriminatorParams {
  std::vector<Affine> layers;          // last layer emits one logit
};

struct GramWae {
  ModelConfig config;
  EncoderParams encoder;
  DecoderParams decoder;
  DiscriminatorParams discriminator;

  std::size_t n_layers() const { return config.layers.size(); }
  const Matrix& decoder_basis(std::size_t layer) const;
};

GramWae init_model(const ModelConfig& config, std::uint64_t seed);
/// Same structure, every parameter zero.
GramWae zeros_like(const GramWae& model);

enum class ParamGroup { autoencoder, discriminator, all };

struct ParamRef {
  std::string name;
  double* data = nullptr;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;

  Eigen::Map<Matrix> map() const { return {data, rows, cols}; }
  Eigen::Index size() const { return rows * cols; }
};

/// Named views of every parameter, in a fixed order that only depends on
/// the configuration (so lists of two same-config models line up).
std::vector<ParamRef> parameter_refs(GramWae& model, ParamGroup group = ParamGroup::all);
std::vector<ParamRef> parameter_refs(const GramWae& model, ParamGroup group = ParamGroup::all);

std::int64_t parameter_count(const GramWae& model);
/// Closed-form count for a configuration, without allocating the model.
std::int64_t count_model_params(const ModelConfig& config);

// ---- Forward / backward --------------------------------------------------------

struct UnitTrace {
  std::vector<Matrix> inputs;  // input of each affine layer, before rectification
};

/// h' = h + A_r(relu(... A_1(relu([h; v])))), batched over columns.
Matrix ru_forward(const RecursiveUnitParams& p, const Matrix& h, const Matrix& v,
                  UnitTrace* trace = nullptr);
void ru_backward(const RecursiveUnitParams& p, const UnitTrace& trace, const Matrix& d_out,
                 RecursiveUnitParams& grad, Matrix& d_h, Matrix& d_v);

struct EncoderTrace {
  std::vector<Matrix> transformed;  // per layer, d_v x B
  std::vector<UnitTrace> units;     // per layer
  std::vector<Matrix> trunk_inputs;
  Matrix head_input;
};

struct DecoderTrace {
  Matrix latent;
  std::vector<Matrix> branch_inputs;  // per layer
  std::vector<Matrix> transformed;    // per layer, d_v x B
  std::vector<UnitTrace> units;       // per layer (unused at layer 0)
  std::vector<Matrix> trunk_inputs;
};

struct DiscriminatorTrace {
  std::vector<Matrix> inputs;
};

using GramBatch = std::vector<const GramSet*>;

/// Latent codes, one column per batch entry.
Matrix encode_batch(const GramWae& model, const GramBatch& batch, EncoderTrace* trace = nullptr);
/// `d_inputs`, if given, receives dL/dG for every input Gram matrix.
void encode_backward(const GramWae& model, const GramBatch& batch, const EncoderTrace& trace,
                     const Matrix& d_latent, GramWae& grad,
                     std::vector<GramSet>* d_inputs = nullptr);

std::vector<GramSet> decode_batch(const GramWae& model, const Matrix& latent,
                                  DecoderTrace* trace = nullptr);
void decode_backward(const GramWae& model, const DecoderTrace& trace,
                     const std::vector<GramSet>& d_outputs, GramWae& grad,
                     Matrix* d_latent = nullptr);

/// Discriminator logits, 1 x B.
Matrix discriminator_logits(const DiscriminatorParams& p, const Matrix& latent,
                            DiscriminatorTrace* trace = nullptr);
void discriminator_backward(const DiscriminatorParams& p, const DiscriminatorTrace& trace,
                            const Matrix& d_logits, DiscriminatorParams* grad,
                            Matrix* d_latent);

// Single-sample conveniences.
Vector encode(const GramSet& x, const GramWae& model);
GramSet decode(const Vector& z, const GramWae& model);
double discriminate(const Vector& z, const DiscriminatorParams& p);

}  // namespace gramtex
