#include "gramtex/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "gramtex/array_file.hpp"
#include "gramtex/error.hpp"

namespace gramtex {
namespace {

double layer_weight(std::span<const double> weights, std::size_t l) {
  return weights.empty() ? 1.0 : weights[l];
}

void check_pair(const GramSet& x, const GramSet& x_hat, std::span<const double> weights) {
  require(x.size() == x_hat.size(), ErrorCode::dimension_mismatch,
          "reconstruction has " + std::to_string(x_hat.size()) + " layers, target " +
              std::to_string(x.size()));
  require(weights.empty() || weights.size() == x.size(), ErrorCode::dimension_mismatch,
          "one reconstruction weight per layer expected");
  for (std::size_t l = 0; l < x.size(); ++l) {
    require(x.grams[l].rows() == x_hat.grams[l].rows() && x.grams[l].cols() == x_hat.grams[l].cols(),
            ErrorCode::dimension_mismatch, "layer " + std::to_string(l) + " shape mismatch");
  }
}

double clamp_prob(double p, double clamp) { return std::clamp(p, clamp, 1.0 - clamp); }

bool inside(double p, double clamp) { return p > clamp && p < 1.0 - clamp; }

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  }
  return m;
}

struct AdamSlot {
  Eigen::Map<Matrix> param;
  Eigen::Map<Matrix> grad;
  Eigen::Map<Matrix> m;
  Eigen::Map<Matrix> v;
};

void adam_update(std::vector<AdamSlot>& slots, const TrainConfig& cfg, std::int64_t t) {
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto& s : slots) {
    s.m = cfg.beta1 * s.m + (1.0 - cfg.beta1) * s.grad;
    s.v = cfg.beta2 * s.v + (1.0 - cfg.beta2) * s.grad.cwiseAbs2();
    s.param.array() -= cfg.learning_rate * (s.m.array() / c1) /
                       ((s.v.array() / c2).sqrt() + cfg.adam_epsilon);
  }
}

std::vector<Eigen::Map<Matrix>> affine_maps(std::vector<Affine>& layers) {
  std::vector<Eigen::Map<Matrix>> out;
  for (auto& a : layers) {
    out.emplace_back(a.weight.data(), a.weight.rows(), a.weight.cols());
    out.emplace_back(a.bias.data(), a.bias.size(), 1);
  }
  return out;
}

std::vector<AdamSlot> zip_slots(std::vector<Eigen::Map<Matrix>> p, std::vector<Eigen::Map<Matrix>> g,
                                std::vector<Eigen::Map<Matrix>> m, std::vector<Eigen::Map<Matrix>> v) {
  std::vector<AdamSlot> out;
  for (std::size_t i = 0; i < p.size(); ++i) out.push_back({p[i], g[i], m[i], v[i]});
  return out;
}

std::vector<Eigen::Map<Matrix>> ref_maps(const std::vector<ParamRef>& refs) {
  std::vector<Eigen::Map<Matrix>> out;
  for (const auto& r : refs) out.push_back(r.map());
  return out;
}

bool all_finite(const GramWae& grad, ParamGroup group) {
  for (const auto& ref : parameter_refs(grad, group)) {
    if (!ref.map().allFinite()) return false;
  }
  return true;
}

bool all_finite(std::vector<Affine>& layers) {
  return std::all_of(layers.begin(), layers.end(),
                     [](const Affine& a) { return a.weight.allFinite() && a.bias.allFinite(); });
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 rng_from_string(const std::string& s) {
  std::mt19937_64 rng;
  std::istringstream is(s);
  is >> rng;
  require(!is.fail(), ErrorCode::io, "corrupt rng state in checkpoint");
  return rng;
}

}  // namespace

nlohmann::json TrainConfig::to_json() const {
  return {{"lambda_adv", adv_weight},     {"learning_rate", learning_rate},
          {"beta1", beta1},               {"beta2", beta2},
          {"adam_epsilon", adam_epsilon}, {"batch_size", batch_size},
          {"max_steps", max_steps},       {"layer_weights", layer_weights},
          {"seed", seed},                 {"saturating_adv", saturating_adv},
          {"prob_clamp", prob_clamp},     {"snapshot_every", snapshot_every}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.adv_weight = j.at("lambda_adv").get<double>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.adam_epsilon = j.at("adam_epsilon").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.max_steps = j.at("max_steps").get<std::int64_t>();
    c.layer_weights = j.at("layer_weights").get<std::vector<double>>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.saturating_adv = j.at("saturating_adv").get<bool>();
    c.prob_clamp = j.at("prob_clamp").get<double>();
    c.snapshot_every = j.at("snapshot_every").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_config, std::string("malformed training config: ") + e.what());
  }
  return c;
}

void TrainConfig::validate() const {
  require(adv_weight >= 0.0, ErrorCode::invalid_config, "lambda_adv must be >= 0");
  require(batch_size >= 1, ErrorCode::invalid_config, "batch_size must be >= 1");
  require(learning_rate > 0.0, ErrorCode::invalid_config, "learning_rate must be > 0");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorCode::invalid_config,
          "Adam betas must lie in [0, 1)");
  require(max_steps >= 0, ErrorCode::invalid_config, "max_steps must be >= 0");
  require(prob_clamp > 0.0 && prob_clamp < 0.5, ErrorCode::invalid_config,
          "prob_clamp must lie in (0, 0.5)");
  require(std::all_of(layer_weights.begin(), layer_weights.end(), [](double w) { return w >= 0.0; }),
          ErrorCode::invalid_config, "layer weights must be >= 0");
}

TrainState init_train_state(const ModelConfig& model_config, const TrainConfig& cfg) {
  cfg.validate();
  require(cfg.layer_weights.empty() || cfg.layer_weights.size() == model_config.layers.size(),
          ErrorCode::invalid_config, "one layer weight per model layer expected");
  TrainState s;
  s.model = init_model(model_config, cfg.seed);
  s.adam_m = zeros_like(s.model);
  s.adam_v = zeros_like(s.model);
  s.rng.seed(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  return s;
}

double loss_rec(const GramSet& x, const GramSet& x_hat, std::span<const double> weights) {
  check_pair(x, x_hat, weights);
  double total = 0.0;
  for (std::size_t l = 0; l < x.size(); ++l) {
    total += layer_weight(weights, l) * (x.grams[l] - x_hat.grams[l]).squaredNorm();
  }
  return total;
}

double loss_rec_batch(const GramBatch& x, const std::vector<GramSet>& x_hat,
                      std::span<const double> weights, std::vector<GramSet>* d_x_hat) {
  require(!x.empty() && x.size() == x_hat.size(), ErrorCode::dimension_mismatch,
          "reconstruction batch size mismatch");
  const double inv_b = 1.0 / static_cast<double>(x.size());
  double total = 0.0;
  if (d_x_hat) d_x_hat->assign(x.size(), GramSet{});
  for (std::size_t b = 0; b < x.size(); ++b) {
    check_pair(*x[b], x_hat[b], weights);
    for (std::size_t l = 0; l < x_hat[b].size(); ++l) {
      const Matrix diff = x_hat[b].grams[l] - x[b]->grams[l];
      const double w = layer_weight(weights, l);
      total += w * diff.squaredNorm();
      if (d_x_hat) (*d_x_hat)[b].grams.push_back((2.0 * w * inv_b) * diff);
    }
  }
  return total * inv_b;
}

double loss_adv(const Matrix& z_prior, const Matrix& z_enc, const DiscriminatorParams& dis,
                double clamp) {
  return -discriminator_loss(z_prior, z_enc, dis, clamp, nullptr);
}

double discriminator_loss(const Matrix& z_prior, const Matrix& z_enc,
                          const DiscriminatorParams& dis, double clamp,
                          DiscriminatorParams* grad) {
  require(z_prior.cols() > 0 && z_enc.cols() > 0, ErrorCode::invalid_argument,
          "adversarial loss needs non-empty batches");
  DiscriminatorTrace trace_prior, trace_enc;
  const Matrix a_prior = discriminator_logits(dis, z_prior, grad ? &trace_prior : nullptr);
  const Matrix a_enc = discriminator_logits(dis, z_enc, grad ? &trace_enc : nullptr);
  const double inv_p = 1.0 / static_cast<double>(z_prior.cols());
  const double inv_e = 1.0 / static_cast<double>(z_enc.cols());
  double value = 0.0;
  Matrix d_prior(1, a_prior.cols()), d_enc(1, a_enc.cols());
  for (Eigen::Index i = 0; i < a_prior.cols(); ++i) {
    const double p = sigmoid(a_prior(0, i));
    value -= inv_p * std::log(clamp_prob(p, clamp));
    // d(-log p)/da = p - 1, zero where the clamp is active
    d_prior(0, i) = inside(p, clamp) ? inv_p * (p - 1.0) : 0.0;
  }
  for (Eigen::Index i = 0; i < a_enc.cols(); ++i) {
    const double p = sigmoid(a_enc(0, i));
    value -= inv_e * std::log(1.0 - clamp_prob(p, clamp));
    d_enc(0, i) = inside(p, clamp) ? inv_e * p : 0.0;
  }
  if (grad) {
    discriminator_backward(dis, trace_prior, d_prior, grad, nullptr);
    discriminator_backward(dis, trace_enc, d_enc, grad, nullptr);
  }
  return value;
}

double encoder_adv_loss(const Matrix& z_enc, const DiscriminatorParams& dis, double clamp,
                        bool saturating, Matrix* d_z) {
  require(z_enc.cols() > 0, ErrorCode::invalid_argument, "adversarial loss needs a non-empty batch");
  DiscriminatorTrace trace;
  const Matrix a = discriminator_logits(dis, z_enc, d_z ? &trace : nullptr);
  const double inv_b = 1.0 / static_cast<double>(z_enc.cols());
  double value = 0.0;
  Matrix d_a(1, a.cols());
  for (Eigen::Index i = 0; i < a.cols(); ++i) {
    const double p = sigmoid(a(0, i));
    const bool live = inside(p, clamp);
    if (saturating) {
      value += inv_b * std::log(1.0 - clamp_prob(p, clamp));
      d_a(0, i) = live ? -inv_b * p : 0.0;
    } else {
      value -= inv_b * std::log(clamp_prob(p, clamp));
      d_a(0, i) = live ? inv_b * (p - 1.0) : 0.0;
    }
  }
  if (d_z) discriminator_backward(dis, trace, d_a, nullptr, d_z);
  return value;
}

void autoencoder_loss(const GramWae& model, const GramBatch& batch, const TrainConfig& cfg,
                      const DiscriminatorParams& dis, GramWae& grad, double& rec, double& adv) {
  EncoderTrace enc_trace;
  const Matrix z = encode_batch(model, batch, &enc_trace);
  DecoderTrace dec_trace;
  const std::vector<GramSet> x_hat = decode_batch(model, z, &dec_trace);
  std::vector<GramSet> d_x_hat;
  rec = loss_rec_batch(batch, x_hat, cfg.layer_weights, &d_x_hat);
  Matrix d_z;
  decode_backward(model, dec_trace, d_x_hat, grad, &d_z);
  adv = 0.0;
  if (cfg.adv_weight > 0.0) {
    Matrix d_z_adv;
    adv = encoder_adv_loss(z, dis, cfg.prob_clamp, cfg.saturating_adv, &d_z_adv);
    d_z += cfg.adv_weight * d_z_adv;
  }
  encode_backward(model, batch, enc_trace, d_z, grad);
}

std::vector<std::size_t> batch_indices(std::size_t n_samples, int batch_size, std::int64_t step,
                                       std::uint64_t seed) {
  require(n_samples > 0, ErrorCode::insufficient_samples, "empty dataset");
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  std::int64_t cached_epoch = -1;
  std::vector<std::size_t> perm(n_samples);
  for (int i = 0; i < batch_size; ++i) {
    const auto p = static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(batch_size) +
                   static_cast<std::uint64_t>(i);
    const auto epoch = static_cast<std::int64_t>(p / n_samples);
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::mt19937_64 rng(seed + 7919ULL * static_cast<std::uint64_t>(epoch + 1));
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    out.push_back(perm[p % n_samples]);
  }
  return out;
}

void train_step(TrainState& state, const std::vector<GramSet>& data, const TrainConfig& cfg) {
  require(!data.empty(), ErrorCode::insufficient_samples, "empty dataset");
  const auto indices = batch_indices(data.size(), cfg.batch_size, state.step, cfg.seed);
  GramBatch batch;
  for (auto i : indices) batch.push_back(&data[i]);
  const std::int64_t t = state.step + 1;
  const bool adversarial = cfg.adv_weight > 0.0;

  // Discriminator update, staged in copies until every loss is known finite.
  std::mt19937_64 rng = state.rng;
  DiscriminatorParams dis = state.model.discriminator;
  DiscriminatorParams dis_m = state.adam_m.discriminator;
  DiscriminatorParams dis_v = state.adam_v.discriminator;
  double dis_loss = 0.0;
  if (adversarial) {
    const Matrix z_prior = normal_matrix(state.model.config.latent_dim,
                                         static_cast<Eigen::Index>(batch.size()), rng);
    const Matrix z_enc = encode_batch(state.model, batch);
    DiscriminatorParams dis_grad = zeros_like(state.model).discriminator;
    dis_loss = discriminator_loss(z_prior, z_enc, dis, cfg.prob_clamp, &dis_grad);
    if (!std::isfinite(dis_loss) || !all_finite(dis_grad.layers)) {
      throw NonFiniteLoss("non-finite discriminator loss at step " + std::to_string(state.step));
    }
    auto slots = zip_slots(affine_maps(dis.layers), affine_maps(dis_grad.layers),
                           affine_maps(dis_m.layers), affine_maps(dis_v.layers));
    adam_update(slots, cfg, t);
  }

  // Encoder/decoder update against the freshly updated discriminator.
  GramWae grad = zeros_like(state.model);
  double rec = 0.0, adv = 0.0;
  autoencoder_loss(state.model, batch, cfg, dis, grad, rec, adv);
  if (!std::isfinite(rec) || !std::isfinite(adv) || !all_finite(grad, ParamGroup::autoencoder)) {
    throw NonFiniteLoss("non-finite auto-encoder loss at step " + std::to_string(state.step));
  }

  auto slots = zip_slots(ref_maps(parameter_refs(state.model, ParamGroup::autoencoder)),
                         ref_maps(parameter_refs(grad, ParamGroup::autoencoder)),
                         ref_maps(parameter_refs(state.adam_m, ParamGroup::autoencoder)),
                         ref_maps(parameter_refs(state.adam_v, ParamGroup::autoencoder)));
  adam_update(slots, cfg, t);
  if (adversarial) {
    state.model.discriminator = std::move(dis);
    state.adam_m.discriminator = std::move(dis_m);
    state.adam_v.discriminator = std::move(dis_v);
  }
  state.rng = rng;
  state.trace.push_back({state.step, rec, adv, dis_loss});
  ++state.step;
}

void train(TrainState& state, const std::vector<GramSet>& data, const TrainConfig& cfg,
           const TrainHooks& hooks) {
  cfg.validate();
  require(!data.empty(), ErrorCode::insufficient_samples, "empty dataset");
  while (state.step < cfg.max_steps) {
    try {
      train_step(state, data, cfg);
    } catch (const NonFiniteLoss&) {
      if (hooks.on_failure) hooks.on_failure(state);
      throw;
    }
    const auto& last = state.trace.back();
    if (state.step % 100 == 0 || state.step == cfg.max_steps) {
      spdlog::debug("step {} L_rec={:.6g} L_adv={:.6g} L_dis={:.6g}", last.step, last.rec,
                    last.adv, last.dis);
    }
    if (cfg.snapshot_every > 0 && state.step % cfg.snapshot_every == 0 && hooks.on_snapshot) {
      hooks.on_snapshot(state);
    }
  }
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                     const TrainConfig& cfg) {
  auto file = ArrayFile::create(path);
  const auto params = parameter_refs(state.model);
  const auto m = parameter_refs(state.adam_m);
  const auto v = parameter_refs(state.adam_v);
  for (std::size_t i = 0; i < params.size(); ++i) {
    file.write_matrix(params[i].name, params[i].map(), StoragePrecision::float64);
    file.write_matrix("optimizer/m/" + m[i].name, m[i].map(), StoragePrecision::float64);
    file.write_matrix("optimizer/v/" + v[i].name, v[i].map(), StoragePrecision::float64);
  }
  if (!state.trace.empty()) {
    Matrix trace(static_cast<Eigen::Index>(state.trace.size()), 4);
    for (std::size_t i = 0; i < state.trace.size(); ++i) {
      const auto& r = state.trace[i];
      trace.row(static_cast<Eigen::Index>(i)) << static_cast<double>(r.step), r.rec, r.adv, r.dis;
    }
    file.write_matrix("trace", trace, StoragePrecision::float64);
  }
  nlohmann::json manifest = state.model.config.to_json();
  manifest["config"] = cfg.to_json();
  manifest["step"] = state.step;
  manifest["rng_state"] = rng_to_string(state.rng);
  file.set_metadata(manifest);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto file = ArrayFile::open(path);
  const nlohmann::json manifest = file.metadata();
  Checkpoint ck;
  ModelConfig model_config = ModelConfig::from_json(manifest);
  try {
    ck.config = TrainConfig::from_json(manifest.at("config"));
    ck.state.step = manifest.at("step").get<std::int64_t>();
    ck.state.rng = rng_from_string(manifest.at("rng_state").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::io, path.string() + ": malformed checkpoint manifest: " + e.what());
  }
  ck.state.model = zeros_like(init_model(model_config, 0));
  ck.state.adam_m = zeros_like(ck.state.model);
  ck.state.adam_v = zeros_like(ck.state.model);
  auto load_into = [&](const std::vector<ParamRef>& refs, const std::string& prefix) {
    for (const auto& ref : refs) {
      const Matrix m = file.read_matrix(prefix + ref.name);
      require(m.rows() == ref.rows && m.cols() == ref.cols, ErrorCode::io,
              path.string() + ": parameter " + ref.name + " has wrong shape");
      ref.map() = m;
    }
  };
  load_into(parameter_refs(ck.state.model), "");
  load_into(parameter_refs(ck.state.adam_m), "optimizer/m/");
  load_into(parameter_refs(ck.state.adam_v), "optimizer/v/");
  if (file.contains("trace")) {
    const Matrix trace = file.read_matrix("trace");
    for (Eigen::Index i = 0; i < trace.rows(); ++i) {
      ck.state.trace.push_back({static_cast<std::int64_t>(trace(i, 0)), trace(i, 1), trace(i, 2),
                                trace(i, 3)});
    }
  }
  return ck;
}

void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> trace) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
  out << "step,L_rec,L_adv,L_dis\n";
  out.precision(17);
  for (const auto& r : trace) out << r.step << ',' << r.rec << ',' << r.adv << ',' << r.dis << '\n';
}

}  // namespace gramtex
