#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "gramtex/recursive_wae.hpp"

namespace gramtex {

struct TrainConfig {
  double adv_weight = 0.1;       // lambda on the encoder's adversarial term
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int batch_size = 64;
  std::int64_t max_steps = 1000;
  std::vector<double> layer_weights;  // w_l; empty means 1 for every layer
  std::uint64_t seed = 0;
  bool saturating_adv = false;   // encoder minimizes E log(1 - Dis(Enc X)) instead of -E log Dis(Enc X)
  double prob_clamp = 1e-6;      // probabilities clamped to [clamp, 1 - clamp] before logs
  std::int64_t snapshot_every = 0;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  void validate() const;
};

struct LossRecord {
  std::int64_t step = 0;
  double rec = 0.0;  // L_rec, batch mean
  double adv = 0.0;  // adversarial term minimized by the encoder (before lambda)
  double dis = 0.0;  // discriminator loss, -L_adv
};

struct TrainState {
  GramWae model;
  GramWae adam_m;  // first moments, same layout as model
  GramWae adam_v;  // second moments
  std::int64_t step = 0;
  std::mt19937_64 rng;  // prior draws
  std::vector<LossRecord> trace;
};

TrainState init_train_state(const ModelConfig& model_config, const TrainConfig& cfg);

// ---- Losses ---------------------------------------------------------------------

/// sum_l w_l ||G_l - Ghat_l||_F^2 for one pair. Empty weights mean 1.
double loss_rec(const GramSet& x, const GramSet& x_hat, std::span<const double> weights = {});

/// Batch mean of loss_rec; fills dL/dGhat when `d_x_hat` is given.
double loss_rec_batch(const GramBatch& x, const std::vector<GramSet>& x_hat,
                      std::span<const double> weights, std::vector<GramSet>* d_x_hat);

/// E[log Dis(Z)] + E[log(1 - Dis(Enc X))] with clamped probabilities.
/// Columns of the inputs are samples.
double loss_adv(const Matrix& z_prior, const Matrix& z_enc, const DiscriminatorParams& dis,
                double clamp = 1e-6);

/// Discriminator loss -L_adv and its gradient w.r.t. the discriminator.
double discriminator_loss(const Matrix& z_prior, const Matrix& z_enc,
                          const DiscriminatorParams& dis, double clamp,
                          DiscriminatorParams* grad);

/// Encoder-side adversarial term for codes `z_enc` and its gradient w.r.t.
/// the codes. Non-saturating: -E log Dis(z); saturating: E log(1 - Dis(z)).
double encoder_adv_loss(const Matrix& z_enc, const DiscriminatorParams& dis, double clamp,
                        bool saturating, Matrix* d_z);

/// Full auto-encoder objective L_rec + lambda * adv on one batch, with
/// gradients accumulated into `grad` (a zeros_like model). Returns L_rec and
/// the adversarial term through the out parameters.
void autoencoder_loss(const GramWae& model, const GramBatch& batch, const TrainConfig& cfg,
                      const DiscriminatorParams& dis, GramWae& grad, double& rec, double& adv);

// ---- Optimization ---------------------------------------------------------------

/// Dataset indices of the batch at `step`: position p = step*B + i walks
/// through a per-epoch permutation seeded from (seed, epoch).
std::vector<std::size_t> batch_indices(std::size_t n_samples, int batch_size, std::int64_t step,
                                       std::uint64_t seed);

/// One discriminator update on -L_adv followed by one encoder/decoder update.
/// Throws NonFiniteLoss and leaves `state` unchanged if any loss or gradient
/// is not finite.
void train_step(TrainState& state, const std::vector<GramSet>& data, const TrainConfig& cfg);

struct TrainHooks {
  std::function<void(const TrainState&)> on_snapshot;  // every cfg.snapshot_every steps
  std::function<void(const TrainState&)> on_failure;   // last good state before rethrow
};

/// Runs train_step until state.step reaches cfg.max_steps.
void train(TrainState& state, const std::vector<GramSet>& data, const TrainConfig& cfg,
           const TrainHooks& hooks = {});

// ---- Persistence ----------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                     const TrainConfig& cfg);

struct Checkpoint {
  TrainState state;
  TrainConfig config;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Writes step,L_rec,L_adv,L_dis rows.
void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> trace);

}  // namespace gramtex
