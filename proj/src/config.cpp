#include "gramtex/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "gramtex/error.hpp"

namespace gramtex {
namespace {

std::string trim(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return std::string(s.substr(begin, end - begin + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* first = value.data();
  const auto* last = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  require(ec == std::errc() && ptr == last, ErrorCode::invalid_config,
          "config key " + key + ": cannot parse '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  fail(ErrorCode::invalid_config, "config key " + key + ": expected true/false, got '" + value + "'");
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    require(eq != std::string::npos, ErrorCode::invalid_config,
            "config line " + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(std::string_view(body).substr(0, eq));
    std::string value = trim(std::string_view(body).substr(eq + 1));
    require(!key.empty(), ErrorCode::invalid_config,
            "config line " + std::to_string(line_no) + ": empty key");
    require(!out.contains(key), ErrorCode::invalid_config, "duplicate config key " + key);
    out.emplace(std::move(key), std::move(value));
  }
  return out;
}

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::invalid_config, "cannot read config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_key_values(buffer.str());
}

void apply_config(const std::map<std::string, std::string>& values, ModelConfig& model,
                  TrainConfig& train) {
  for (const auto& [key, value] : values) {
    if (key == "d_e") {
      model.latent_dim = parse_number<int>(key, value);
    } else if (key == "d_r") {
      model.hidden_dim = parse_number<int>(key, value);
    } else if (key == "d_v") {
      model.transform_dim = parse_number<int>(key, value);
    } else if (key == "r") {
      model.unit_depth = parse_number<int>(key, value);
    } else if (key == "d_dis") {
      model.discriminator_width = parse_number<int>(key, value);
    } else if (key == "dis_layers") {
      model.discriminator_layers = parse_number<int>(key, value);
    } else if (key == "basis_multiplier") {
      model.basis_multiplier = parse_number<int>(key, value);
    } else if (key == "transform") {
      require(value == "gram2vec" || value == "dense_fc", ErrorCode::invalid_config,
              "transform must be gram2vec or dense_fc");
      model.transform = value == "gram2vec" ? TransformVariant::gram2vec : TransformVariant::dense_fc;
    } else if (key == "architecture") {
      require(value == "recursive" || value == "mlp", ErrorCode::invalid_config,
              "architecture must be recursive or mlp");
      model.architecture = value == "recursive" ? Architecture::recursive : Architecture::mlp;
    } else if (key == "tie_bases") {
      model.tie_bases = parse_bool(key, value);
    } else if (key == "share_units") {
      model.share_units = parse_bool(key, value);
    } else if (key == "lambda_adv") {
      train.adv_weight = parse_number<double>(key, value);
    } else if (key == "learning_rate") {
      train.learning_rate = parse_number<double>(key, value);
    } else if (key == "beta1") {
      train.beta1 = parse_number<double>(key, value);
    } else if (key == "beta2") {
      train.beta2 = parse_number<double>(key, value);
    } else if (key == "adam_epsilon") {
      train.adam_epsilon = parse_number<double>(key, value);
    } else if (key == "batch_size") {
      train.batch_size = parse_number<int>(key, value);
    } else if (key == "max_steps") {
      train.max_steps = parse_number<std::int64_t>(key, value);
    } else if (key == "seed") {
      train.seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "saturating_adv") {
      train.saturating_adv = parse_bool(key, value);
    } else if (key == "prob_clamp") {
      train.prob_clamp = parse_number<double>(key, value);
    } else if (key == "snapshot_every") {
      train.snapshot_every = parse_number<std::int64_t>(key, value);
    } else if (key == "layer_weights") {
      train.layer_weights.clear();
      std::istringstream in(value);
      std::string item;
      while (std::getline(in, item, ',')) train.layer_weights.push_back(parse_number<double>(key, trim(item)));
    } else {
      fail(ErrorCode::invalid_config, "unknown config key " + key);
    }
  }
  train.validate();
}

}  // namespace gramtex
