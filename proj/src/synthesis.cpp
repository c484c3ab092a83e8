#include "gramtex/synthesis.hpp"

#include <algorithm>
#include <fstream>
#include <random>

#include <spdlog/spdlog.h>

#include "gramtex/error.hpp"
#include "gramtex/gram_transform.hpp"
#include "gramtex/lbfgs.hpp"

namespace gramtex {
namespace {

double weight_of(const SynthesisTarget& target, std::size_t l) {
  return target.layer_weights.empty() ? 1.0 / static_cast<double>(target.grams.size())
                                      : target.layer_weights[l];
}

template <typename T>
std::vector<int> resolve_stages(const ConvBackbone<T>& backbone, const SynthesisTarget& target) {
  require(target.grams.size() >= 1, ErrorCode::empty_layer_spec, "empty layer spec");
  require(target.layer_weights.empty() || target.layer_weights.size() == target.grams.size(),
          ErrorCode::dimension_mismatch, "one synthesis weight per layer expected");
  std::vector<int> stages;
  for (std::size_t l = 0; l < target.grams.size(); ++l) {
    const auto& id = target.grams.layer_ids[l];
    const int s = backbone.stage_index(id);
    require(s >= 0, ErrorCode::dimension_mismatch, "backbone has no layer " + id);
    const auto channels = backbone.stages()[static_cast<std::size_t>(s)].def.out_channels;
    require(target.grams.grams[l].rows() == channels && target.grams.grams[l].cols() == channels,
            ErrorCode::dimension_mismatch, "target gram for " + id + " has wrong width");
    stages.push_back(s);
  }
  return stages;
}

}  // namespace

template <typename T>
double gram_loss(const ConvBackbone<T>& backbone, const typename ConvBackbone<T>::Act& pixels,
                 const SynthesisTarget& target, typename ConvBackbone<T>::Act* grad,
                 std::vector<double>* layer_residuals) {
  using Act = typename ConvBackbone<T>::Act;
  const auto stages = resolve_stages(backbone, target);
  const int n_stages = *std::max_element(stages.begin(), stages.end()) + 1;
  const auto outputs = backbone.forward(pixels, target.height, target.width, n_stages);

  std::vector<Act> output_grads(static_cast<std::size_t>(n_stages));
  if (layer_residuals) layer_residuals->clear();
  double loss = 0.0;
  for (std::size_t l = 0; l < stages.size(); ++l) {
    const auto& out = outputs[static_cast<std::size_t>(stages[l])];
    const Matrix residual = normalized_gram(out.values.template cast<double>()) - target.grams.grams[l];
    const double w = weight_of(target, l);
    const double sq = residual.squaredNorm();
    loss += w * sq;
    if (layer_residuals) layer_residuals->push_back(std::sqrt(sq));
    if (grad) {
      // G = F^T F / n, so dL/dF = (2w/n) F (R + R^T)
      const double scale = 2.0 * w / static_cast<double>(out.values.rows());
      const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> sym =
          (scale * (residual + residual.transpose())).template cast<T>();
      Act d = out.values * sym;
      Act& slot = output_grads[static_cast<std::size_t>(stages[l])];
      if (slot.size() == 0) {
        slot = std::move(d);
      } else {
        slot += d;
      }
    }
  }
  if (grad) *grad = backbone.backward(outputs, target.height, target.width, output_grads);
  return loss;
}

template double gram_loss<float>(const ConvBackbone<float>&, const ConvBackbone<float>::Act&,
                                 const SynthesisTarget&, ConvBackbone<float>::Act*,
                                 std::vector<double>*);
template double gram_loss<double>(const ConvBackbone<double>&, const ConvBackbone<double>::Act&,
                                  const SynthesisTarget&, ConvBackbone<double>::Act*,
                                  std::vector<double>*);

ImageRGB white_noise_image(int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  ImageRGB img(height, width);
  for (int k = 0; k < height * width; ++k) {
    for (int c = 0; c < 3; ++c) img.pixels(k, c) = u(rng);
  }
  return img;
}

SynthesisResult synthesize(const Backbone& backbone, const SynthesisTarget& target,
                           const SynthesisOptions& options) {
  require(options.max_iters >= 0, ErrorCode::invalid_argument, "max_iters must be >= 0");
  SynthesisTarget tgt = target;
  if (options.project_targets_psd) {
    for (auto& g : tgt.grams.grams) g = project_psd(g);
  }
  const auto stages = resolve_stages(backbone, tgt);
  backbone.check_input_size(tgt.height, tgt.width, *std::max_element(stages.begin(), stages.end()) + 1);

  const Eigen::Index n_pixels = static_cast<Eigen::Index>(tgt.height) * tgt.width;
  auto to_act = [&](const Vector& x) {
    return Backbone::Act(Eigen::Map<const RowMatrix>(x.data(), n_pixels, 3).cast<float>());
  };
  auto to_vector = [&](const ImageRGB& img) {
    require(img.height == tgt.height && img.width == tgt.width, ErrorCode::dimension_mismatch,
            "initial image size does not match the synthesis size");
    RowMatrix rows = img.pixels.cast<double>();
    return Vector(Eigen::Map<const Vector>(rows.data(), rows.size()));
  };
  const Objective objective = [&](const Vector& x, Vector& g) {
    Backbone::Act grad;
    const double loss = gram_loss(backbone, to_act(x), tgt, &grad);
    const RowMatrix gd = grad.cast<double>();
    g = Eigen::Map<const Vector>(gd.data(), gd.size());
    return loss;
  };

  LbfgsOptions lbfgs;
  lbfgs.max_iters = options.max_iters;
  lbfgs.history = options.history;
  lbfgs.lower = 0.0;
  lbfgs.upper = 1.0;

  Vector x0;
  if (options.init == SynthesisInit::image) {
    require(options.init_image.has_value(), ErrorCode::invalid_argument,
            "image initialisation requested without an image");
    x0 = to_vector(*options.init_image);
  } else {
    x0 = to_vector(white_noise_image(tgt.height, tgt.width, options.seed));
  }

  SynthesisResult result;
  LbfgsResult run = minimize_lbfgs(objective, x0, lbfgs);
  if (run.non_finite) {
    spdlog::warn("synthesis hit a non-finite loss; restarting from fresh noise");
    result.restarts = 1;
    run = minimize_lbfgs(objective, to_vector(white_noise_image(tgt.height, tgt.width, options.seed + 1)),
                         lbfgs);
    if (run.non_finite) throw NonFiniteLoss("synthesis loss is not finite after restart");
  }

  const Vector clamped = run.x.cwiseMax(0.0).cwiseMin(1.0);
  const Backbone::Act final_pixels = to_act(clamped);
  result.image = ImageRGB(tgt.height, tgt.width);
  result.image.pixels = final_pixels;
  result.loss = gram_loss(backbone, final_pixels, tgt, nullptr, &result.layer_residuals);
  result.initial_loss = run.trace.front();
  result.iterations = run.iterations;
  result.evaluations = run.evaluations;
  result.trace = std::move(run.trace);
  return result;
}

void write_trace_csv(const std::filesystem::path& path, std::span<const double> trace) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
  out << "iteration,best_loss\n";
  out.precision(17);
  for (std::size_t i = 0; i < trace.size(); ++i) out << i << ',' << trace[i] << '\n';
}

}  // namespace gramtex
