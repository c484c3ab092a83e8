#include "gramtex/cli.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "gramtex/array_file.hpp"
#include "gramtex/backbone.hpp"
#include "gramtex/config.hpp"
#include "gramtex/corpus.hpp"
#include "gramtex/error.hpp"
#include "gramtex/evaluation.hpp"
#include "gramtex/feature_gram.hpp"
#include "gramtex/image_io.hpp"
#include "gramtex/latent_gmm.hpp"
#include "gramtex/recursive_wae.hpp"
#include "gramtex/synthesis.hpp"
#include "gramtex/training.hpp"

namespace gramtex {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string> kCommands = {"make-corpus", "extract", "train",   "fit-gmm",
                                            "sample",      "synthesize", "evaluate", "embed"};

struct RunContext {
  std::optional<fs::path> run_dir;

  fs::path resolve(const fs::path& p) const {
    if (!run_dir || p.empty() || p.is_absolute()) return p;
    return *run_dir / p;
  }

  void record(const std::string& command, const std::vector<std::string>& args) const {
    if (!run_dir) return;
    fs::create_directories(*run_dir);
    const fs::path path = *run_dir / "run_manifest.json";
    json manifest = {{"steps", json::array()}};
    if (fs::exists(path)) {
      std::ifstream in(path);
      manifest = json::parse(in, nullptr, false);
      if (manifest.is_discarded() || !manifest.contains("steps")) manifest = {{"steps", json::array()}};
    }
    manifest["steps"].push_back({{"command", command}, {"args", args}});
    std::ofstream(path) << manifest.dump(2) << '\n';
  }
};

// ---- Gram directories -----------------------------------------------------------

struct GramDirectory {
  LayerSpec spec;
  std::vector<std::string> stems;
  std::vector<std::optional<std::string>> families;
  fs::path dir;

  fs::path file(std::size_t i) const { return dir / (stems[i] + ".h5"); }
};

json layer_spec_json(const LayerSpec& spec) {
  json layers = json::array();
  for (const auto& l : spec.layers) {
    layers.push_back({{"layer_id", l.layer_id}, {"channels", l.channels}, {"downsample", l.downsample}});
  }
  return {{"backbone_id", spec.backbone_id}, {"layers", layers}};
}

LayerSpec layer_spec_from_json(const json& j) {
  LayerSpec spec;
  spec.backbone_id = j.at("backbone_id").get<std::string>();
  for (const auto& l : j.at("layers")) {
    spec.layers.push_back({l.at("layer_id").get<std::string>(), l.at("channels").get<int>(),
                           l.at("downsample").get<int>()});
  }
  return spec;
}

void write_gram_directory(const GramDirectory& d, const json& extra = json::object()) {
  json entries = json::array();
  for (std::size_t i = 0; i < d.stems.size(); ++i) {
    json e = {{"stem", d.stems[i]}, {"gram_file", d.stems[i] + ".h5"}};
    if (d.families[i]) e["family"] = *d.families[i];
    entries.push_back(e);
  }
  json manifest = {{"layer_spec", layer_spec_json(d.spec)}, {"entries", entries}};
  manifest.update(extra);
  fs::create_directories(d.dir);
  std::ofstream out(d.dir / "manifest.json");
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + (d.dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

GramDirectory read_gram_directory(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "no Gram manifest at " + path.string());
  GramDirectory d;
  d.dir = dir;
  try {
    const json manifest = json::parse(in);
    d.spec = layer_spec_from_json(manifest.at("layer_spec"));
    for (const auto& e : manifest.at("entries")) {
      d.stems.push_back(e.at("stem").get<std::string>());
      d.families.push_back(e.contains("family") ? std::optional<std::string>(e.at("family").get<std::string>())
                                                : std::nullopt);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::io, path.string() + ": malformed Gram manifest: " + e.what());
  }
  return d;
}

std::vector<GramSet> load_grams(const GramDirectory& d) {
  std::vector<GramSet> out;
  out.reserve(d.stems.size());
  for (std::size_t i = 0; i < d.stems.size(); ++i) out.push_back(load_gram_set(d.file(i)));
  return out;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

LayerSpec select_layers(const Backbone& backbone, const std::vector<std::string>& ids) {
  LayerSpec full = backbone.full_layer_spec();
  if (ids.empty()) return full;
  LayerSpec spec;
  spec.backbone_id = full.backbone_id;
  for (const auto& id : ids) {
    const int s = backbone.stage_index(id);
    require(s >= 0, ErrorCode::invalid_argument, "backbone " + backbone.identifier() + " has no layer " + id);
    spec.layers.push_back(full.layers[static_cast<std::size_t>(s)]);
  }
  validate(spec);
  return spec;
}

Corpus open_corpus(const fs::path& path, const IngestOptions& options) {
  if (fs::is_regular_file(path)) return load_corpus(path);
  if (fs::is_regular_file(path / "manifest.jsonl")) return load_corpus(path / "manifest.jsonl");
  return ingest(path, options);
}

Matrix encode_all(const GramWae& model, const std::vector<GramSet>& data) {
  require(!data.empty(), ErrorCode::insufficient_samples, "no Gram sets to encode");
  Matrix codes(model.config.latent_dim, static_cast<Eigen::Index>(data.size()));
  constexpr std::size_t chunk = 64;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    GramBatch batch;
    for (std::size_t i = start; i < std::min(data.size(), start + chunk); ++i) batch.push_back(&data[i]);
    codes.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(batch.size())) =
        encode_batch(model, batch);
  }
  return codes;
}

std::vector<fs::path> image_files(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorCode::io, "not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& item : fs::directory_iterator(dir)) {
    if (!item.is_regular_file()) continue;
    std::string ext = item.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    const std::string stem = item.path().stem().string();
    if ((ext == ".png" || ext == ".jpg" || ext == ".jpeg") && !stem.ends_with("_mask")) {
      out.push_back(item.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

fs::path with_suffix(const fs::path& p, const std::string& suffix) {
  fs::path out = p;
  out.replace_filename(p.stem().string() + suffix);
  return out;
}

// ---- Commands -------------------------------------------------------------------

struct MakeCorpusArgs {
  std::string out;
  int n = 0;
  std::string families = "stripes,dots,checker";
  std::uint64_t seed = 0;
  int size = 64;
};

json run_make_corpus(const MakeCorpusArgs& a, const RunContext& ctx) {
  std::vector<TextureFamily> families;
  for (const auto& f : split_csv(a.families)) families.push_back(family_from_string(f));
  Corpus corpus = make_synthetic_corpus(a.n, families, a.seed, a.size);
  save_corpus(ctx.resolve(a.out), corpus);
  return {{"samples", corpus.size()}, {"manifest", (ctx.resolve(a.out) / "manifest.jsonl").string()}};
}

struct ExtractArgs {
  std::string corpus;
  std::string out;
  std::string backbone = "vgg5@0";
  std::vector<std::string> layers;
  std::vector<std::string> keywords;
  double min_mask = 0.01;
  int size = 0;
};

json run_extract(const ExtractArgs& a, const RunContext& ctx) {
  const Backbone backbone = make_backbone(a.backbone);
  const LayerSpec spec = select_layers(backbone, a.layers);
  IngestOptions ingest_options;
  ingest_options.keywords = a.keywords;
  ingest_options.min_mask_fraction = a.min_mask;
  const Corpus corpus = open_corpus(ctx.resolve(a.corpus), ingest_options);

  GramDirectory d;
  d.dir = ctx.resolve(a.out);
  d.spec = spec;
  json skipped = json::array();
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& entry = corpus.entries[i];
    TextureSample sample = corpus.samples[i];
    if (a.size > 0) sample = resize_sample(sample, a.size, a.size);
    try {
      const GramSet grams = extract_gram_set(backbone, sample, spec);
      d.stems.push_back(entry.stem);
      d.families.push_back(entry.family);
      save_gram_set(d.file(d.stems.size() - 1), grams);
    } catch (const EmptyMaskRegion& e) {
      spdlog::error("extract: skipping {}: {}", entry.stem, e.what());
      skipped.push_back({{"stem", entry.stem}, {"reason", e.what()}});
    }
  }
  write_gram_directory(d, {{"skipped", skipped}});
  return {{"gram_files", d.stems.size()}, {"skipped", skipped.size()},
          {"manifest", (d.dir / "manifest.json").string()}};
}

struct TrainArgs {
  std::string grams;
  std::string out;
  std::string config;
  std::string resume;
  std::string loss_csv;
  std::optional<std::int64_t> steps;
  std::optional<std::uint64_t> seed;
};

json run_train(const TrainArgs& a, const RunContext& ctx) {
  const GramDirectory dir = read_gram_directory(ctx.resolve(a.grams));
  const std::vector<GramSet> data = load_grams(dir);
  require(!data.empty(), ErrorCode::insufficient_samples, "empty dataset");

  ModelConfig model_config = default_model_config(dir.spec);
  TrainConfig cfg;
  TrainState state;
  std::map<std::string, std::string> overrides;
  if (!a.config.empty()) overrides = read_key_values(ctx.resolve(a.config));
  if (!a.resume.empty()) {
    Checkpoint ck = load_checkpoint(ctx.resolve(a.resume));
    state = std::move(ck.state);
    cfg = ck.config;
    model_config = state.model.config;
    ModelConfig ignored = model_config;
    apply_config(overrides, ignored, cfg);
  } else {
    apply_config(overrides, model_config, cfg);
  }
  if (a.steps) cfg.max_steps = *a.steps;
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  if (a.resume.empty()) state = init_train_state(model_config, cfg);
  require(state.model.config.layers.channel_counts() == data.front().channel_counts(),
          ErrorCode::dimension_mismatch, "model layers do not match the Gram files");

  const fs::path out = ctx.resolve(a.out);
  TrainHooks hooks;
  hooks.on_snapshot = [&](const TrainState& s) {
    char suffix[32];
    std::snprintf(suffix, sizeof suffix, "_step%06lld.h5", static_cast<long long>(s.step));
    save_checkpoint(with_suffix(out, suffix), s, cfg);
  };
  hooks.on_failure = [&](const TrainState& s) {
    spdlog::error("training diverged at step {}; writing last good checkpoint", s.step);
    save_checkpoint(out, s, cfg);
  };
  train(state, data, cfg, hooks);
  save_checkpoint(out, state, cfg);
  const fs::path csv = a.loss_csv.empty() ? with_suffix(out, ".loss.csv") : ctx.resolve(a.loss_csv);
  write_loss_csv(csv, state.trace);

  json summary = {{"checkpoint", out.string()}, {"loss_csv", csv.string()}, {"steps", state.step},
                  {"parameters", parameter_count(state.model)}};
  if (!state.trace.empty()) {
    summary["initial_rec"] = state.trace.front().rec;
    summary["final_rec"] = state.trace.back().rec;
  }
  return summary;
}

struct FitGmmArgs {
  std::string model;
  std::string grams;
  std::string out;
  std::optional<int> n_components;
  std::vector<int> candidates = {4, 8, 12, 16, 24};
  int folds = 5;
  std::uint64_t seed = 0;
  double floor = 1e-6;
};

json run_fit_gmm(const FitGmmArgs& a, const RunContext& ctx) {
  const Checkpoint ck = load_checkpoint(ctx.resolve(a.model));
  const std::vector<GramSet> data = load_grams(read_gram_directory(ctx.resolve(a.grams)));
  const Matrix codes = encode_all(ck.state.model, data);
  GmmFitOptions options;
  options.floor = a.floor;
  json summary;
  int n_c = 0;
  if (a.n_components) {
    n_c = *a.n_components;
  } else {
    std::vector<double> scores;
    n_c = select_n_components(codes, a.candidates, a.folds, a.seed, options, &scores);
    summary["candidates"] = a.candidates;
    summary["cv_scores"] = scores;
  }
  GmmFitReport report;
  const GmmModel gmm = fit_gmm(codes, n_c, a.seed, options, &report);
  save_gmm(ctx.resolve(a.out), gmm);
  summary["n_c"] = n_c;
  summary["codes"] = codes.cols();
  summary["em_iterations"] = report.iterations;
  summary["mean_log_likelihood"] = report.log_likelihood.back();
  summary["gmm"] = ctx.resolve(a.out).string();
  return summary;
}

struct SampleArgs {
  std::string model;
  std::string gmm;
  std::string prior = "gmm";
  int n = 1;
  std::uint64_t seed = 0;
  std::string out;
};

json run_sample(const SampleArgs& a, const RunContext& ctx) {
  const Checkpoint ck = load_checkpoint(ctx.resolve(a.model));
  const GramWae& model = ck.state.model;
  AffineSampler sampler;
  if (a.prior == "gmm") {
    require(!a.gmm.empty(), ErrorCode::invalid_argument, "--gmm is required for the gmm prior");
    const GmmModel gmm = load_gmm(ctx.resolve(a.gmm));
    require(gmm.dim() == model.config.latent_dim, ErrorCode::dimension_mismatch,
            "GMM dimension does not match the model latent size");
    sampler = to_affine_sampler(gmm);
  } else if (a.prior == "normal") {
    sampler = standard_normal_sampler(model.config.latent_dim);
  } else {
    fail(ErrorCode::invalid_argument, "--prior must be gmm or normal");
  }
  require(a.n >= 1, ErrorCode::invalid_argument, "--n must be >= 1");
  std::mt19937_64 rng(a.seed);
  std::vector<int> components;
  const Matrix z = sample(sampler, a.n, rng, &components);
  const std::vector<GramSet> grams = decode_batch(model, z);

  GramDirectory d;
  d.dir = ctx.resolve(a.out);
  d.spec = model.config.layers;
  for (int i = 0; i < a.n; ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "sample_%04d", i);
    d.stems.emplace_back(stem);
    d.families.emplace_back(std::nullopt);
    save_gram_set(d.file(static_cast<std::size_t>(i)), grams[static_cast<std::size_t>(i)]);
  }
  write_gram_directory(d, {{"prior", a.prior}, {"seed", a.seed}, {"components", components}});
  auto codes_file = ArrayFile::create(d.dir / "codes.h5");
  codes_file.write_matrix("codes", z, StoragePrecision::float64);
  return {{"samples", a.n}, {"prior", a.prior}, {"dir", d.dir.string()}};
}

struct SynthesizeArgs {
  std::string gram_file;
  int size = 256;
  int iters = 500;
  std::uint64_t seed = 0;
  std::string out;
  std::string backbone;
  std::vector<double> layer_weights;
  std::string init_image;
  bool psd = false;
};

json run_synthesize(const SynthesizeArgs& a, const RunContext& ctx) {
  SynthesisTarget target;
  target.grams = load_gram_set(ctx.resolve(a.gram_file));
  target.height = a.size;
  target.width = a.size;
  target.layer_weights = a.layer_weights;
  const Backbone backbone = make_backbone(a.backbone.empty() ? target.grams.backbone_id : a.backbone);
  SynthesisOptions options;
  options.max_iters = a.iters;
  options.seed = a.seed;
  options.project_targets_psd = a.psd;
  if (!a.init_image.empty()) {
    options.init = SynthesisInit::image;
    options.init_image = read_image(ctx.resolve(a.init_image));
  }
  const SynthesisResult result = synthesize(backbone, target, options);
  const fs::path out = ctx.resolve(a.out);
  write_image(out, result.image);
  const fs::path trace = with_suffix(out, ".trace.csv");
  write_trace_csv(trace, result.trace);
  return {{"image", out.string()},        {"trace", trace.string()},
          {"loss", result.loss},          {"initial_loss", result.initial_loss},
          {"iterations", result.iterations}, {"evaluations", result.evaluations},
          {"layer_residuals", result.layer_residuals}};
}

struct EvaluateArgs {
  std::string real_images;
  std::string generated_images;
  std::string real_grams;
  std::string generated_grams;
  std::string backbone = "vgg5@0";
  std::vector<std::string> layers;
  std::string out;
};

json run_evaluate(const EvaluateArgs& a, const RunContext& ctx) {
  require((!a.real_images.empty() && !a.generated_images.empty()) ||
              (!a.real_grams.empty() && !a.generated_grams.empty()),
          ErrorCode::invalid_argument,
          "need --real-images/--generated-images and/or --real-grams/--generated-grams");
  json report;
  if (!a.real_images.empty() && !a.generated_images.empty()) {
    auto backbone = std::make_shared<const Backbone>(make_backbone(a.backbone));
    std::vector<std::string> layers = a.layers;
    if (layers.empty()) layers = backbone->full_layer_spec().layer_ids();
    const PooledBackboneExtractor extractor(backbone, layers);
    auto read_all = [&](const std::string& dir) {
      std::vector<ImageRGB> images;
      for (const auto& p : image_files(ctx.resolve(dir))) images.push_back(read_image(p));
      return images;
    };
    const auto real = read_all(a.real_images);
    const auto generated = read_all(a.generated_images);
    const FidReport fid = compute_fid(real, generated, extractor);
    report["fid"] = {{"score", fid.score}, {"extractor", fid.extractor_id}, {"n_real", fid.n_a},
                     {"n_generated", fid.n_b}, {"clipped", fid.clipped}};
  }
  if (!a.real_grams.empty() && !a.generated_grams.empty()) {
    const GramDirectory real_dir = read_gram_directory(ctx.resolve(a.real_grams));
    const std::vector<GramSet> real = load_grams(real_dir);
    const std::vector<GramSet> generated = load_grams(read_gram_directory(ctx.resolve(a.generated_grams)));
    std::vector<std::string> families;
    for (std::size_t i = 0; i < real.size(); ++i) {
      families.push_back(real_dir.families[i].value_or("unlabelled"));
    }
    report["coverage"] = family_coverage(generated, real, families);
    report["generated"] = generated.size();
  }
  if (!a.out.empty()) {
    const fs::path out = ctx.resolve(a.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream(out) << report.dump(2) << '\n';
  }
  return report;
}

struct EmbedArgs {
  std::string model;
  std::string grams;
  std::string gmm;
  int n_samples = 0;
  std::uint64_t seed = 0;
  std::string out;
};

json run_embed(const EmbedArgs& a, const RunContext& ctx) {
  const Checkpoint ck = load_checkpoint(ctx.resolve(a.model));
  const GramDirectory dir = read_gram_directory(ctx.resolve(a.grams));
  const Matrix codes = encode_all(ck.state.model, load_grams(dir));
  std::optional<GmmModel> gmm;
  if (!a.gmm.empty()) gmm = load_gmm(ctx.resolve(a.gmm));
  Matrix samples;
  if (a.n_samples > 0) {
    require(gmm.has_value(), ErrorCode::invalid_argument, "--n-samples needs --gmm");
    std::mt19937_64 rng(a.seed);
    samples = sample(*gmm, a.n_samples, rng);
  }
  const Embedding e = pca_embed(codes, samples, gmm ? &*gmm : nullptr);
  json ellipses = json::array();
  for (const auto& el : e.ellipses) {
    ellipses.push_back({{"center", {el.center(0), el.center(1)}}, {"covariance", matrix_json(el.covariance)}});
  }
  json families = json::array();
  for (const auto& f : dir.families) families.push_back(f ? json(*f) : json(nullptr));
  const json result = {{"codes", matrix_json(e.code_coords.transpose())},
                       {"families", families},
                       {"samples", matrix_json(e.sample_coords.transpose())},
                       {"ellipses", ellipses},
                       {"variances", {e.variances(0), e.variances(1)}},
                       {"rank_deficient", e.rank_deficient}};
  const fs::path out = ctx.resolve(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream file(out);
  require(static_cast<bool>(file), ErrorCode::io, "cannot write " + out.string());
  file << result.dump(2) << '\n';
  return {{"embedding", out.string()}, {"codes", codes.cols()}, {"samples", samples.cols()}};
}

std::string escape(std::string s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += (c == '\n' || c == '\r') ? ' ' : c;
  }
  return out;
}

int report_error(std::ostream& err, std::string_view code, const std::string& message) {
  err << "error: code=" << code << " message=\"" << escape(message) << "\"\n";
  return code == to_string(ErrorCode::unknown_command) || code == to_string(ErrorCode::invalid_config) ||
                 code == "usage"
             ? 2
             : 1;
}

/// First token that is not a global option (or its value).
std::optional<std::string> find_command(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    const auto& a = args[i];
    if (a == "--run-dir" || a == "--log-level") {
      ++i;
      continue;
    }
    if (a.starts_with("-")) continue;
    return a;
  }
  return std::nullopt;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const auto command = find_command(args);
  const bool wants_help = std::any_of(args.begin(), args.end(),
                                      [](const std::string& a) { return a == "-h" || a == "--help"; });
  if (command && std::find(kCommands.begin(), kCommands.end(), *command) == kCommands.end()) {
    return report_error(err, to_string(ErrorCode::unknown_command), "unknown command " + *command);
  }
  if (!command && !wants_help) {
    return report_error(err, to_string(ErrorCode::unknown_command), "no command given");
  }

  CLI::App app{"Gram-matrix texture generation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  RunContext ctx;
  std::string run_dir;
  std::string log_level = "info";
  app.add_option("--run-dir", run_dir, "Resolve relative paths here and record a run manifest");
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");

  MakeCorpusArgs mc;
  auto* make_corpus = app.add_subcommand("make-corpus", "Render a procedural texture corpus");
  make_corpus->add_option("--out", mc.out, "Output directory")->required();
  make_corpus->add_option("--n", mc.n, "Number of textures")->required();
  make_corpus->add_option("--families", mc.families, "Comma-separated families (stripes,dots,checker)");
  make_corpus->add_option("--seed", mc.seed);
  make_corpus->add_option("--size", mc.size, "Texture side length in pixels");

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract", "Compute Gram files for a corpus");
  extract->add_option("--corpus", ex.corpus, "Corpus directory, manifest.jsonl, or image+mask directory")->required();
  extract->add_option("--out", ex.out, "Output directory for Gram files")->required();
  extract->add_option("--backbone", ex.backbone, "Preset[@seed] or weights file");
  extract->add_option("--layers", ex.layers, "Layer ids (default: every backbone stage)")->delimiter(',');
  extract->add_option("--keywords", ex.keywords, "Attribute keywords filter")->delimiter(',');
  extract->add_option("--min-mask", ex.min_mask, "Minimum mask area fraction");
  extract->add_option("--size", ex.size, "Resize samples to size x size before extraction");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train the Gram auto-encoder");
  train_cmd->add_option("--grams", tr.grams, "Directory written by extract")->required();
  train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
  train_cmd->add_option("--config", tr.config, "key = value configuration file");
  train_cmd->add_option("--resume", tr.resume, "Checkpoint to continue from");
  train_cmd->add_option("--steps", tr.steps, "Total number of steps (overrides max_steps)");
  train_cmd->add_option("--seed", tr.seed);
  train_cmd->add_option("--loss-csv", tr.loss_csv, "Loss trace path (default <out>.loss.csv)");

  FitGmmArgs fg;
  auto* fit_cmd = app.add_subcommand("fit-gmm", "Fit the latent Gaussian mixture");
  fit_cmd->add_option("--model", fg.model)->required();
  fit_cmd->add_option("--grams", fg.grams)->required();
  fit_cmd->add_option("--out", fg.out)->required();
  fit_cmd->add_option("--n-components", fg.n_components, "Fixed component count (skips cross validation)");
  fit_cmd->add_option("--candidates", fg.candidates, "Component counts to cross validate")->delimiter(',');
  fit_cmd->add_option("--folds", fg.folds);
  fit_cmd->add_option("--seed", fg.seed);
  fit_cmd->add_option("--floor", fg.floor, "Covariance eigenvalue floor");

  SampleArgs sa;
  auto* sample_cmd = app.add_subcommand("sample", "Decode Gram sets from prior samples");
  sample_cmd->add_option("--model", sa.model)->required();
  sample_cmd->add_option("--gmm", sa.gmm);
  sample_cmd->add_option("--prior", sa.prior, "gmm or normal");
  sample_cmd->add_option("--n", sa.n);
  sample_cmd->add_option("--seed", sa.seed);
  sample_cmd->add_option("--out", sa.out)->required();

  SynthesizeArgs sy;
  auto* synth_cmd = app.add_subcommand("synthesize", "Render an image matching a Gram file");
  synth_cmd->add_option("--gram-file", sy.gram_file)->required();
  synth_cmd->add_option("--size", sy.size);
  synth_cmd->add_option("--iters", sy.iters);
  synth_cmd->add_option("--seed", sy.seed);
  synth_cmd->add_option("--out", sy.out)->required();
  synth_cmd->add_option("--backbone", sy.backbone, "Override the backbone named in the Gram file");
  synth_cmd->add_option("--layer-weights", sy.layer_weights)->delimiter(',');
  synth_cmd->add_option("--init-image", sy.init_image);
  synth_cmd->add_flag("--psd", sy.psd, "Project targets onto the PSD cone");

  EvaluateArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "FID and family coverage reports");
  eval_cmd->add_option("--real-images", ev.real_images);
  eval_cmd->add_option("--generated-images", ev.generated_images);
  eval_cmd->add_option("--real-grams", ev.real_grams);
  eval_cmd->add_option("--generated-grams", ev.generated_grams);
  eval_cmd->add_option("--backbone", ev.backbone);
  eval_cmd->add_option("--layers", ev.layers)->delimiter(',');
  eval_cmd->add_option("--out", ev.out);

  EmbedArgs em;
  auto* embed_cmd = app.add_subcommand("embed", "2-D PCA embedding of latent codes");
  embed_cmd->add_option("--model", em.model)->required();
  embed_cmd->add_option("--grams", em.grams)->required();
  embed_cmd->add_option("--gmm", em.gmm);
  embed_cmd->add_option("--n-samples", em.n_samples);
  embed_cmd->add_option("--seed", em.seed);
  embed_cmd->add_option("--out", em.out)->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    return report_error(err, "usage", e.what());
  }

  try {
    spdlog::set_level(spdlog::level::from_str(log_level));
    if (!run_dir.empty()) ctx.run_dir = run_dir;
    json summary;
    if (make_corpus->parsed()) summary = run_make_corpus(mc, ctx);
    else if (extract->parsed()) summary = run_extract(ex, ctx);
    else if (train_cmd->parsed()) summary = run_train(tr, ctx);
    else if (fit_cmd->parsed()) summary = run_fit_gmm(fg, ctx);
    else if (sample_cmd->parsed()) summary = run_sample(sa, ctx);
    else if (synth_cmd->parsed()) summary = run_synthesize(sy, ctx);
    else if (eval_cmd->parsed()) summary = run_evaluate(ev, ctx);
    else if (embed_cmd->parsed()) summary = run_embed(em, ctx);
    ctx.record(*command, args);
    out << summary.dump() << '\n';
    return 0;
  } catch (const Error& e) {
    return report_error(err, to_string(e.code()), e.what());
  } catch (const std::exception& e) {
    return report_error(err, "internal", e.what());
  }
}

}  // namespace gramtex
