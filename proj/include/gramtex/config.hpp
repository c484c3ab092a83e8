#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "gramtex/recursive_wae.hpp"
#include "gramtex/training.hpp"

namespace gramtex {

/// Flat `key = value` lines; '#' starts a comment. Duplicate keys and lines
/// without '=' are invalid_config errors.
std::map<std::string, std::string> parse_key_values(const std::string& text);
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);

/// Applies recognised keys to the model and training configurations; any
/// unknown key or malformed value is an invalid_config error.
///
/// Model keys: d_e, d_r, d_v, r, d_dis, dis_layers, basis_multiplier,
///   transform (gram2vec|dense_fc), architecture (recursive|mlp),
///   tie_bases, share_units.
/// Training keys: lambda_adv, learning_rate, beta1, beta2, adam_epsilon,
///   batch_size, max_steps, layer_weights (comma separated), seed,
///   saturating_adv, prob_clamp, snapshot_every.
void apply_config(const std::map<std::string, std::string>& values, ModelConfig& model,
                  TrainConfig& train);

}  // namespace gramtex
