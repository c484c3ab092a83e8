#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "gramtex/backbone.hpp"
#include "gramtex/feature_gram.hpp"
#include "gramtex/types.hpp"

namespace gramtex {

struct SynthesisTarget {
  GramSet grams;
  std::vector<double> layer_weights;  // empty means 1/L for every layer
  int height = 256;
  int width = 256;
};

enum class SynthesisInit { white_noise, image };

struct SynthesisOptions {
  SynthesisInit init = SynthesisInit::white_noise;
  std::optional<ImageRGB> init_image;  // required when init == image
  int max_iters = 500;
  std::uint64_t seed = 0;
  int history = 10;
  bool project_targets_psd = false;  // clip negative eigenvalues of the targets first
};

struct SynthesisResult {
  ImageRGB image;                      // values in [0,1]
  double loss = 0.0;                   // evaluated at `image`
  double initial_loss = 0.0;
  std::vector<double> layer_residuals; // ||G_l(image) - target_l||_F
  int iterations = 0;
  int evaluations = 0;
  int restarts = 0;
  std::vector<double> trace;           // best-so-far loss, entry 0 at the initial image
};

/// sum_l w_l ||Gram_l(pixels) - target_l||_F^2 over the full image, with the
/// pixel gradient when `grad` is given. `pixels` is (h*w) x 3 in [0,1].
template <typename T>
double gram_loss(const ConvBackbone<T>& backbone,
                 const typename ConvBackbone<T>::Act& pixels, const SynthesisTarget& target,
                 typename ConvBackbone<T>::Act* grad = nullptr,
                 std::vector<double>* layer_residuals = nullptr);

/// Optimizes pixels to match the target Grams with L-BFGS. The loss trace
/// is monotone; on a non-finite loss the run restarts once from fresh noise.
SynthesisResult synthesize(const Backbone& backbone, const SynthesisTarget& target,
                           const SynthesisOptions& options);

ImageRGB white_noise_image(int height, int width, std::uint64_t seed);

/// Writes iteration,best_loss rows.
void write_trace_csv(const std::filesystem::path& path, std::span<const double> trace);

}  // namespace gramtex
