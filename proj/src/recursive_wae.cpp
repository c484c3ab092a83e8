#include "gramtex/recursive_wae.hpp"

#include <random>

#include "gramtex/error.hpp"

namespace gramtex {
namespace {

std::string to_string(TransformVariant v) {
  return v == TransformVariant::gram2vec ? "gram2vec" : "dense_fc";
}

std::string to_string(Architecture a) { return a == Architecture::recursive ? "recursive" : "mlp"; }

std::size_t encoder_unit_index(const ModelConfig& c, std::size_t layer) {
  return c.share_units ? 0 : layer;
}

// Decoder units run after emitting layers L-1 .. 1; layer 0 needs none.
std::size_t decoder_unit_index(const ModelConfig& c, std::size_t layer) {
  return c.share_units ? 0 : layer - 1;
}

std::size_t encoder_unit_count(const ModelConfig& c) {
  return c.share_units ? 1 : c.layers.size();
}

std::size_t decoder_unit_count(const ModelConfig& c) {
  const std::size_t n = c.layers.size();
  if (n <= 1) return 0;
  return c.share_units ? 1 : n - 1;
}

RecursiveUnitParams init_unit(const ModelConfig& c, std::mt19937_64& rng) {
  RecursiveUnitParams u;
  u.layers.push_back(init_affine(c.hidden_dim + c.transform_dim, c.hidden_dim, rng));
  for (int j = 1; j < c.unit_depth; ++j) u.layers.push_back(init_affine(c.hidden_dim, c.hidden_dim, rng));
  return u;
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double variance, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(variance));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

Eigen::Map<const Vector> flat(const Matrix& m) { return {m.data(), m.size()}; }

void check_batch(const GramWae& model, const GramBatch& batch) {
  require(!batch.empty(), ErrorCode::invalid_argument, "empty batch");
  const auto& layers = model.config.layers.layers;
  for (const GramSet* x : batch) {
    require(x->size() == layers.size(), ErrorCode::dimension_mismatch,
            "gram set has " + std::to_string(x->size()) + " layers, model expects " +
                std::to_string(layers.size()));
    for (std::size_t l = 0; l < layers.size(); ++l) {
      require(x->grams[l].rows() == layers[l].channels && x->grams[l].cols() == layers[l].channels,
              ErrorCode::dimension_mismatch, "gram layer " + layers[l].layer_id + " has wrong width");
    }
  }
}

template <typename Model>
std::vector<ParamRef> collect(Model& model, ParamGroup group) {
  std::vector<ParamRef> out;
  auto add = [&](const std::string& name, auto& m) {
    if (m.size() == 0) return;
    out.push_back({name, const_cast<double*>(m.data()), m.rows(), m.cols()});
  };
  auto add_affine = [&](const std::string& prefix, auto& a) {
    add(prefix + "/weight", a.weight);
    add(prefix + "/bias", a.bias);
  };
  auto add_unit = [&](const std::string& prefix, auto& u) {
    for (std::size_t j = 0; j < u.layers.size(); ++j) add_affine(prefix + "/fc" + std::to_string(j), u.layers[j]);
  };
  const auto& ids = model.config.layers.layers;
  if (group != ParamGroup::discriminator) {
    auto& enc = model.encoder;
    for (std::size_t l = 0; l < enc.g2v.size(); ++l) {
      add("g2v/" + ids[l].layer_id + "/U", enc.g2v[l].basis);
      add("g2v/" + ids[l].layer_id + "/W_out", enc.g2v[l].mixing);
    }
    for (std::size_t l = 0; l < enc.dense.size(); ++l) add("encoder/dense/" + ids[l].layer_id + "/W", enc.dense[l]);
    for (std::size_t k = 0; k < enc.units.size(); ++k) add_unit("encoder/unit" + std::to_string(k), enc.units[k]);
    add("encoder/initial_hidden", enc.initial_hidden);
    for (std::size_t j = 0; j < enc.trunk.size(); ++j) add_affine("encoder/trunk" + std::to_string(j), enc.trunk[j]);
    add_affine("encoder/head", enc.head);

    auto& dec = model.decoder;
    add_affine("decoder/head", dec.head);
    for (std::size_t k = 0; k < dec.units.size(); ++k) add_unit("decoder/unit" + std::to_string(k), dec.units[k]);
    for (std::size_t l = 0; l < dec.branches.size(); ++l) add_affine("decoder/branch/" + ids[l].layer_id, dec.branches[l]);
    for (std::size_t j = 0; j < dec.trunk.size(); ++j) add_affine("decoder/trunk" + std::to_string(j), dec.trunk[j]);
    for (std::size_t l = 0; l < dec.v2g.size(); ++l) {
      add("v2g/" + ids[l].layer_id + "/W_in", dec.v2g[l].mixing);
      add("v2g/" + ids[l].layer_id + "/U", dec.v2g[l].basis);
    }
    for (std::size_t l = 0; l < dec.dense.size(); ++l) add("decoder/dense/" + ids[l].layer_id + "/W", dec.dense[l]);
  }
  if (group != ParamGroup::autoencoder) {
    auto& dis = model.discriminator;
    for (std::size_t j = 0; j < dis.layers.size(); ++j) add_affine("discriminator/fc" + std::to_string(j), dis.layers[j]);
  }
  return out;
}

Matrix transform_encode(const GramWae& m, std::size_t l, const GramBatch& batch) {
  const auto b_count = static_cast<Eigen::Index>(batch.size());
  Matrix v(m.config.transform_dim, b_count);
  for (Eigen::Index b = 0; b < b_count; ++b) {
    const Matrix& g = batch[static_cast<std::size_t>(b)]->grams[l];
    if (m.config.transform == TransformVariant::gram2vec) {
      v.col(b) = g2v(g, m.encoder.g2v[l]);
    } else {
      v.col(b) = m.encoder.dense[l] * flat(g);
    }
  }
  return v;
}

void transform_encode_backward(const GramWae& m, std::size_t l, const GramBatch& batch,
                               const Matrix& d_v, GramWae& grad, std::vector<GramSet>* d_inputs) {
  for (Eigen::Index b = 0; b < d_v.cols(); ++b) {
    const Matrix& g = batch[static_cast<std::size_t>(b)]->grams[l];
    Matrix d_gram;
    if (m.config.transform == TransformVariant::gram2vec) {
      const auto& p = m.encoder.g2v[l];
      g2v_backward(g, p.basis, p.mixing, d_v.col(b), grad.encoder.g2v[l].basis,
                   grad.encoder.g2v[l].mixing, d_inputs ? &d_gram : nullptr);
    } else {
      grad.encoder.dense[l].noalias() += d_v.col(b) * flat(g).transpose();
      if (d_inputs) {
        const Vector d_flat = m.encoder.dense[l].transpose() * d_v.col(b);
        d_gram = Eigen::Map<const Matrix>(d_flat.data(), g.rows(), g.cols());
      }
    }
    if (d_inputs) (*d_inputs)[static_cast<std::size_t>(b)].grams[l] = std::move(d_gram);
  }
}

Matrix transform_decode(const GramWae& m, std::size_t l, const Vector& v) {
  if (m.config.transform == TransformVariant::gram2vec) {
    return weighted_outer_sum(m.decoder_basis(l), m.decoder.v2g[l].mixing * v);
  }
  const auto c = m.config.layers.layers[l].channels;
  const Vector flat_out = m.decoder.dense[l] * v;
  const Eigen::Map<const Matrix> raw(flat_out.data(), c, c);
  return (raw + raw.transpose()) * 0.5;
}

Vector transform_decode_backward(const GramWae& m, std::size_t l, const Vector& v,
                                 const Matrix& d_gram, GramWae& grad) {
  Vector d_v;
  if (m.config.transform == TransformVariant::gram2vec) {
    Matrix& d_basis = m.config.tie_bases ? grad.encoder.g2v[l].basis : grad.decoder.v2g[l].basis;
    v2g_backward(v, m.decoder_basis(l), m.decoder.v2g[l].mixing, d_gram, d_basis,
                 grad.decoder.v2g[l].mixing, &d_v);
  } else {
    const Matrix d_raw = (d_gram + d_gram.transpose()) * 0.5;
    grad.decoder.dense[l].noalias() += flat(d_raw) * v.transpose();
    d_v = m.decoder.dense[l].transpose() * flat(d_raw);
  }
  return d_v;
}

}  // namespace

nlohmann::json ModelConfig::to_json() const {
  nlohmann::json layer_list = nlohmann::json::array();
  for (const auto& l : layers.layers) {
    layer_list.push_back({{"layer_id", l.layer_id}, {"channels", l.channels}, {"downsample", l.downsample}});
  }
  return {{"layer_spec", {{"backbone_id", layers.backbone_id}, {"layers", layer_list}}},
          {"d_e", latent_dim},
          {"d_r", hidden_dim},
          {"d_v", transform_dim},
          {"r", unit_depth},
          {"d_dis", discriminator_width},
          {"dis_layers", discriminator_layers},
          {"D_rule", std::to_string(basis_multiplier) + "*C"},
          {"basis_multiplier", basis_multiplier},
          {"transform", to_string(transform)},
          {"architecture", to_string(architecture)},
          {"tie_bases", tie_bases},
          {"share_units", share_units}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    const auto& spec = j.at("layer_spec");
    c.layers.backbone_id = spec.at("backbone_id").get<std::string>();
    for (const auto& l : spec.at("layers")) {
      c.layers.layers.push_back({l.at("layer_id").get<std::string>(), l.at("channels").get<int>(),
                                 l.at("downsample").get<int>()});
    }
    c.latent_dim = j.at("d_e").get<int>();
    c.hidden_dim = j.at("d_r").get<int>();
    c.transform_dim = j.at("d_v").get<int>();
    c.unit_depth = j.at("r").get<int>();
    c.discriminator_width = j.at("d_dis").get<int>();
    c.discriminator_layers = j.at("dis_layers").get<int>();
    c.basis_multiplier = j.at("basis_multiplier").get<int>();
    const auto transform = j.at("transform").get<std::string>();
    require(transform == "gram2vec" || transform == "dense_fc", ErrorCode::invalid_config,
            "unknown transform " + transform);
    c.transform = transform == "gram2vec" ? TransformVariant::gram2vec : TransformVariant::dense_fc;
    const auto arch = j.at("architecture").get<std::string>();
    require(arch == "recursive" || arch == "mlp", ErrorCode::invalid_config,
            "unknown architecture " + arch);
    c.architecture = arch == "recursive" ? Architecture::recursive : Architecture::mlp;
    c.tie_bases = j.at("tie_bases").get<bool>();
    c.share_units = j.at("share_units").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_config, std::string("malformed model config: ") + e.what());
  }
  return c;
}

ModelConfig default_model_config(const LayerSpec& layers) {
  ModelConfig c;
  c.layers = layers;
  return c;
}

const Matrix& GramWae::decoder_basis(std::size_t layer) const {
  return config.tie_bases ? encoder.g2v[layer].basis : decoder.v2g[layer].basis;
}

GramWae init_model(const ModelConfig& c, std::uint64_t seed) {
  validate(c.layers);
  require(c.latent_dim >= 1 && c.hidden_dim >= 1 && c.transform_dim >= 1 && c.unit_depth >= 1 &&
              c.discriminator_layers >= 1 && c.discriminator_width >= 1 && c.basis_multiplier >= 1,
          ErrorCode::invalid_config, "model dimensions must be positive");
  std::mt19937_64 rng(seed);
  GramWae m;
  m.config = c;
  const auto n_layers = c.layers.size();
  const int dv = c.transform_dim;

  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& layer = c.layers.layers[l];
    const int channels = layer.channels;
    if (c.transform == TransformVariant::gram2vec) {
      const int rows = basis_size(channels, c.basis_multiplier);
      m.encoder.g2v.push_back(init_g2v(layer.layer_id, channels, dv, rows, rng));
      V2GParams dec = init_v2g(layer.layer_id, channels, dv, rows, rng);
      if (c.tie_bases) dec.basis.resize(0, 0);
      m.decoder.v2g.push_back(std::move(dec));
    } else {
      const double cc = static_cast<double>(channels) * channels;
      m.encoder.dense.push_back(gaussian(dv, channels * channels, 1.0 / std::max(cc, 1.0), rng));
      m.decoder.dense.push_back(gaussian(channels * channels, dv, 1.0 / dv, rng));
    }
  }

  if (c.architecture == Architecture::recursive) {
    for (std::size_t k = 0; k < encoder_unit_count(c); ++k) m.encoder.units.push_back(init_unit(c, rng));
    m.encoder.initial_hidden = Vector::Zero(c.hidden_dim);
    m.encoder.head = init_affine(c.hidden_dim, c.latent_dim, rng);
    m.decoder.head = init_affine(c.latent_dim, c.hidden_dim, rng, 1.0);
    for (std::size_t k = 0; k < decoder_unit_count(c); ++k) m.decoder.units.push_back(init_unit(c, rng));
    for (std::size_t l = 0; l < n_layers; ++l) m.decoder.branches.push_back(init_affine(c.hidden_dim, dv, rng));
  } else {
    const int stacked = dv * static_cast<int>(n_layers);
    m.encoder.trunk.push_back(init_affine(stacked, c.hidden_dim, rng));
    m.encoder.trunk.push_back(init_affine(c.hidden_dim, c.hidden_dim, rng));
    m.encoder.trunk.push_back(init_affine(c.hidden_dim, c.hidden_dim, rng));
    m.encoder.head = init_affine(c.hidden_dim, c.latent_dim, rng);
    m.decoder.head = init_affine(c.latent_dim, c.hidden_dim, rng, 1.0);
    m.decoder.trunk.push_back(init_affine(c.hidden_dim, c.hidden_dim, rng));
    m.decoder.trunk.push_back(init_affine(c.hidden_dim, c.hidden_dim, rng));
    m.decoder.trunk.push_back(init_affine(c.hidden_dim, stacked, rng));
  }

  int width_in = c.latent_dim;
  for (int j = 0; j < c.discriminator_layers; ++j) {
    const bool last = j + 1 == c.discriminator_layers;
    const int width_out = last ? 1 : c.discriminator_width;
    m.discriminator.layers.push_back(init_affine(width_in, width_out, rng, j == 0 ? 1.0 : 2.0));
    width_in = width_out;
  }
  return m;
}

GramWae zeros_like(const GramWae& model) {
  GramWae z = model;
  for (auto& ref : parameter_refs(z)) ref.map().setZero();
  return z;
}

std::vector<ParamRef> parameter_refs(GramWae& model, ParamGroup group) {
  return collect(model, group);
}

std::vector<ParamRef> parameter_refs(const GramWae& model, ParamGroup group) {
  return collect(model, group);
}

std::int64_t parameter_count(const GramWae& model) {
  std::int64_t n = 0;
  for (const auto& ref : parameter_refs(model)) n += ref.size();
  return n;
}

std::int64_t count_model_params(const ModelConfig& c) {
  using I = std::int64_t;
  const I de = c.latent_dim, dr = c.hidden_dim, dv = c.transform_dim;
  const I n_layers = static_cast<I>(c.layers.size());
  auto affine = [](I in, I out) { return in * out + out; };
  I total = 0;

  for (const auto& layer : c.layers.layers) {
    const I ch = layer.channels;
    if (c.transform == TransformVariant::gram2vec) {
      const I rows = static_cast<I>(c.basis_multiplier) * ch;
      total += rows * ch + dv * rows;                     // encoder U, W_out
      total += rows * dv + (c.tie_bases ? 0 : rows * ch);  // decoder W_in, U
    } else {
      total += 2 * ch * ch * dv;
    }
  }

  if (c.architecture == Architecture::recursive) {
    const I unit = affine(dr + dv, dr) + (c.unit_depth - 1) * affine(dr, dr);
    total += static_cast<I>(encoder_unit_count(c) + decoder_unit_count(c)) * unit;
    total += dr + affine(dr, de);               // h^(0), encoder head
    total += affine(de, dr);                    // decoder head
    total += n_layers * affine(dr, dv);         // branches
  } else {
    const I stacked = dv * n_layers;
    total += affine(stacked, dr) + 2 * affine(dr, dr) + affine(dr, de);
    total += affine(de, dr) + 2 * affine(dr, dr) + affine(dr, stacked);
  }

  I width_in = de;
  for (int j = 0; j < c.discriminator_layers; ++j) {
    const I width_out = j + 1 == c.discriminator_layers ? 1 : c.discriminator_width;
    total += affine(width_in, width_out);
    width_in = width_out;
  }
  return total;
}

// ---- recursive unit -------------------------------------------------------------

Matrix ru_forward(const RecursiveUnitParams& p, const Matrix& h, const Matrix& v, UnitTrace* trace) {
  require(h.cols() == v.cols(), ErrorCode::dimension_mismatch, "hidden/vector batch sizes differ");
  require(!p.layers.empty() && p.layers.front().in_dim() == h.rows() + v.rows(),
          ErrorCode::dimension_mismatch, "recursive unit input width mismatch");
  Matrix x(h.rows() + v.rows(), h.cols());
  x.topRows(h.rows()) = h;
  x.bottomRows(v.rows()) = v;
  if (trace) trace->inputs.clear();
  for (const Affine& layer : p.layers) {
    Matrix y = affine_forward(layer, x, true);
    if (trace) trace->inputs.push_back(std::move(x));
    x = std::move(y);
  }
  require(x.rows() == h.rows(), ErrorCode::dimension_mismatch, "recursive unit output width mismatch");
  return h + x;
}

void ru_backward(const RecursiveUnitParams& p, const UnitTrace& trace, const Matrix& d_out,
                 RecursiveUnitParams& grad, Matrix& d_h, Matrix& d_v) {
  Matrix d = d_out;
  for (std::size_t j = p.layers.size(); j-- > 0;) {
    Matrix dx;
    affine_backward(p.layers[j], trace.inputs[j], true, d, &grad.layers[j], &dx);
    d = std::move(dx);
  }
  const auto hidden = d_out.rows();
  d_h = d_out + d.topRows(hidden);
  d_v = d.bottomRows(d.rows() - hidden);
}

// ---- encoder --------------------------------------------------------------------

Matrix encode_batch(const GramWae& model, const GramBatch& batch, EncoderTrace* trace) {
  check_batch(model, batch);
  const auto& c = model.config;
  const std::size_t n_layers = model.n_layers();
  const auto b_count = static_cast<Eigen::Index>(batch.size());
  EncoderTrace local;
  EncoderTrace& t = trace ? *trace : local;
  t = EncoderTrace{};
  for (std::size_t l = 0; l < n_layers; ++l) t.transformed.push_back(transform_encode(model, l, batch));

  Matrix h;
  if (c.architecture == Architecture::recursive) {
    h = model.encoder.initial_hidden.replicate(1, b_count);
    t.units.resize(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
      h = ru_forward(model.encoder.units[encoder_unit_index(c, l)], h, t.transformed[l], &t.units[l]);
    }
  } else {
    h.resize(c.transform_dim * static_cast<Eigen::Index>(n_layers), b_count);
    for (std::size_t l = 0; l < n_layers; ++l) {
      h.middleRows(static_cast<Eigen::Index>(l) * c.transform_dim, c.transform_dim) = t.transformed[l];
    }
    for (const Affine& layer : model.encoder.trunk) {
      Matrix next = affine_forward(layer, h, true);
      t.trunk_inputs.push_back(std::move(h));
      h = std::move(next);
    }
  }
  t.head_input = h;
  return affine_forward(model.encoder.head, h, true);
}

void encode_backward(const GramWae& model, const GramBatch& batch, const EncoderTrace& trace,
                     const Matrix& d_latent, GramWae& grad, std::vector<GramSet>* d_inputs) {
  const auto& c = model.config;
  const std::size_t n_layers = model.n_layers();
  if (d_inputs) {
    d_inputs->assign(batch.size(), GramSet{});
    for (std::size_t b = 0; b < batch.size(); ++b) {
      (*d_inputs)[b].layer_ids = batch[b]->layer_ids;
      (*d_inputs)[b].grams.resize(n_layers);
    }
  }
  Matrix d_h;
  affine_backward(model.encoder.head, trace.head_input, true, d_latent, &grad.encoder.head, &d_h);

  std::vector<Matrix> d_transformed(n_layers);
  if (c.architecture == Architecture::recursive) {
    for (std::size_t l = n_layers; l-- > 0;) {
      const std::size_t k = encoder_unit_index(c, l);
      Matrix d_prev;
      ru_backward(model.encoder.units[k], trace.units[l], d_h, grad.encoder.units[k], d_prev,
                  d_transformed[l]);
      d_h = std::move(d_prev);
    }
    grad.encoder.initial_hidden += d_h.rowwise().sum();
  } else {
    for (std::size_t j = model.encoder.trunk.size(); j-- > 0;) {
      Matrix dx;
      affine_backward(model.encoder.trunk[j], trace.trunk_inputs[j], true, d_h, &grad.encoder.trunk[j], &dx);
      d_h = std::move(dx);
    }
    for (std::size_t l = 0; l < n_layers; ++l) {
      d_transformed[l] = d_h.middleRows(static_cast<Eigen::Index>(l) * c.transform_dim, c.transform_dim);
    }
  }
  for (std::size_t l = 0; l < n_layers; ++l) {
    transform_encode_backward(model, l, batch, d_transformed[l], grad, d_inputs);
  }
}

// ---- decoder --------------------------------------------------------------------

std::vector<GramSet> decode_batch(const GramWae& model, const Matrix& latent, DecoderTrace* trace) {
  const auto& c = model.config;
  require(latent.rows() == c.latent_dim, ErrorCode::dimension_mismatch,
          "latent code length " + std::to_string(latent.rows()) + " != " + std::to_string(c.latent_dim));
  const std::size_t n_layers = model.n_layers();
  const auto b_count = latent.cols();
  DecoderTrace local;
  DecoderTrace& t = trace ? *trace : local;
  t = DecoderTrace{};
  t.latent = latent;
  t.transformed.resize(n_layers);

  Matrix h = affine_forward(model.decoder.head, latent, false);
  if (c.architecture == Architecture::recursive) {
    t.branch_inputs.resize(n_layers);
    t.units.resize(n_layers);
    for (std::size_t l = n_layers; l-- > 0;) {
      t.branch_inputs[l] = h;
      t.transformed[l] = affine_forward(model.decoder.branches[l], h, true);
      if (l > 0) {
        h = ru_forward(model.decoder.units[decoder_unit_index(c, l)], h, t.transformed[l], &t.units[l]);
      }
    }
  } else {
    for (const Affine& layer : model.decoder.trunk) {
      Matrix next = affine_forward(layer, h, true);
      t.trunk_inputs.push_back(std::move(h));
      h = std::move(next);
    }
    for (std::size_t l = 0; l < n_layers; ++l) {
      t.transformed[l] = h.middleRows(static_cast<Eigen::Index>(l) * c.transform_dim, c.transform_dim);
    }
  }

  std::vector<GramSet> out(static_cast<std::size_t>(b_count));
  for (Eigen::Index b = 0; b < b_count; ++b) {
    GramSet& g = out[static_cast<std::size_t>(b)];
    g.backbone_id = c.layers.backbone_id;
    g.layer_ids = c.layers.layer_ids();
    for (std::size_t l = 0; l < n_layers; ++l) {
      g.grams.push_back(transform_decode(model, l, t.transformed[l].col(b)));
    }
  }
  return out;
}

void decode_backward(const GramWae& model, const DecoderTrace& trace,
                     const std::vector<GramSet>& d_outputs, GramWae& grad, Matrix* d_latent) {
  const auto& c = model.config;
  const std::size_t n_layers = model.n_layers();
  const auto b_count = trace.latent.cols();
  require(static_cast<Eigen::Index>(d_outputs.size()) == b_count, ErrorCode::dimension_mismatch,
          "one output gradient per batch entry expected");

  std::vector<Matrix> d_transformed(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    d_transformed[l].resize(c.transform_dim, b_count);
    for (Eigen::Index b = 0; b < b_count; ++b) {
      d_transformed[l].col(b) = transform_decode_backward(
          model, l, trace.transformed[l].col(b), d_outputs[static_cast<std::size_t>(b)].grams[l], grad);
    }
  }

  Matrix d_h;
  if (c.architecture == Architecture::recursive) {
    d_h = Matrix::Zero(c.hidden_dim, b_count);
    for (std::size_t l = 0; l < n_layers; ++l) {
      Matrix d_v = d_transformed[l];
      if (l > 0) {
        const std::size_t k = decoder_unit_index(c, l);
        Matrix d_prev, d_v_unit;
        ru_backward(model.decoder.units[k], trace.units[l], d_h, grad.decoder.units[k], d_prev, d_v_unit);
        d_h = std::move(d_prev);
        d_v += d_v_unit;
      }
      Matrix d_branch;
      affine_backward(model.decoder.branches[l], trace.branch_inputs[l], true, d_v,
                      &grad.decoder.branches[l], &d_branch);
      d_h += d_branch;
    }
  } else {
    d_h.resize(c.transform_dim * static_cast<Eigen::Index>(n_layers), b_count);
    for (std::size_t l = 0; l < n_layers; ++l) {
      d_h.middleRows(static_cast<Eigen::Index>(l) * c.transform_dim, c.transform_dim) = d_transformed[l];
    }
    for (std::size_t j = model.decoder.trunk.size(); j-- > 0;) {
      Matrix dx;
      affine_backward(model.decoder.trunk[j], trace.trunk_inputs[j], true, d_h, &grad.decoder.trunk[j], &dx);
      d_h = std::move(dx);
    }
  }
  affine_backward(model.decoder.head, trace.latent, false, d_h, &grad.decoder.head, d_latent);
}

// ---- discriminator --------------------------------------------------------------

Matrix discriminator_logits(const DiscriminatorParams& p, const Matrix& latent, DiscriminatorTrace* trace) {
  require(!p.layers.empty() && p.layers.front().in_dim() == latent.rows(),
          ErrorCode::dimension_mismatch, "discriminator input width mismatch");
  if (trace) trace->inputs.clear();
  Matrix x = latent;
  for (std::size_t j = 0; j < p.layers.size(); ++j) {
    Matrix y = affine_forward(p.layers[j], x, j > 0);
    if (trace) trace->inputs.push_back(std::move(x));
    x = std::move(y);
  }
  return x;
}

void discriminator_backward(const DiscriminatorParams& p, const DiscriminatorTrace& trace,
                            const Matrix& d_logits, DiscriminatorParams* grad, Matrix* d_latent) {
  Matrix d = d_logits;
  for (std::size_t j = p.layers.size(); j-- > 0;) {
    Matrix dx;
    const bool need_dx = j > 0 || d_latent != nullptr;
    affine_backward(p.layers[j], trace.inputs[j], j > 0, d, grad ? &grad->layers[j] : nullptr,
                    need_dx ? &dx : nullptr);
    d = std::move(dx);
  }
  if (d_latent) *d_latent = std::move(d);
}

Vector encode(const GramSet& x, const GramWae& model) {
  return encode_batch(model, GramBatch{&x}).col(0);
}

GramSet decode(const Vector& z, const GramWae& model) {
  return std::move(decode_batch(model, Matrix(z)).front());
}

double discriminate(const Vector& z, const DiscriminatorParams& p) {
  return sigmoid(discriminator_logits(p, Matrix(z))(0, 0));
}

}  // namespace gramtex
