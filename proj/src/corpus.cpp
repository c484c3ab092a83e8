#include "gramtex/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "gramtex/error.hpp"
#include "gramtex/image_io.hpp"

namespace gramtex {
namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

bool is_image_extension(const std::string& ext) {
  const auto e = lower(ext);
  return e == ".png" || e == ".jpg" || e == ".jpeg";
}

bool matches_keywords(const std::filesystem::path& dir, const std::string& stem,
                      const std::vector<std::string>& keywords) {
  if (keywords.empty()) return true;
  std::string haystack = stem;
  const auto sidecar = dir / (stem + ".txt");
  if (std::filesystem::is_regular_file(sidecar)) {
    std::ifstream in(sidecar);
    std::stringstream buffer;
    buffer << in.rdbuf();
    haystack = buffer.str();
  }
  haystack = lower(haystack);
  return std::any_of(keywords.begin(), keywords.end(),
                     [&](const std::string& k) { return haystack.find(lower(k)) != std::string::npos; });
}

struct Palette {
  Eigen::Vector3f a;
  Eigen::Vector3f b;
};

Palette random_palette(std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Palette p;
  for (;;) {
    p.a = {u(rng), u(rng), u(rng)};
    p.b = {u(rng), u(rng), u(rng)};
    if ((p.a - p.b).norm() > 0.5f) return p;
  }
}

// Smooth 0..1 edge so the procedural patterns are band-limited at pixel scale.
float smooth_step(float edge_distance) { return std::clamp(0.5f + edge_distance, 0.0f, 1.0f); }

}  // namespace

std::string to_string(TextureFamily family) {
  switch (family) {
    case TextureFamily::stripes: return "stripes";
    case TextureFamily::dots: return "dots";
    case TextureFamily::checker: return "checker";
  }
  return "unknown";
}

TextureFamily family_from_string(const std::string& name) {
  if (name == "stripes") return TextureFamily::stripes;
  if (name == "dots") return TextureFamily::dots;
  if (name == "checker") return TextureFamily::checker;
  fail(ErrorCode::invalid_argument, "unknown texture family " + name);
}

ImageRGB render_texture(TextureFamily family, int size, std::uint64_t seed) {
  require(size >= 1, ErrorCode::invalid_argument, "texture size must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  const Palette pal = random_palette(rng);
  const float theta = u(rng) * std::numbers::pi_v<float>;
  const float ct = std::cos(theta), st = std::sin(theta);
  const float phase = u(rng);
  ImageRGB img(size, size);

  auto paint = [&](int y, int x, float t) {
    const Eigen::Vector3f c = pal.a * (1.0f - t) + pal.b * t;
    for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = c(ch);
  };

  switch (family) {
    case TextureFamily::stripes: {
      const float period = 6.0f + 10.0f * u(rng);
      const float duty = 0.35f + 0.3f * u(rng);
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const float s = (x * ct + y * st) / period + phase;
          const float f = (s - std::floor(s)) * period;  // position inside one period, pixels
          const float on = duty * period;
          // signed distance to the nearest band edge, positive inside the band
          const float d = f < on ? std::min(f, on - f) : -std::min(f - on, period - f);
          paint(y, x, smooth_step(d));
        }
      }
      break;
    }
    case TextureFamily::dots: {
      const float spacing = 8.0f + 10.0f * u(rng);
      const float radius = spacing * (0.2f + 0.15f * u(rng));
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const float gx = (x * ct + y * st) / spacing + phase;
          const float gy = (-x * st + y * ct) / spacing + phase;
          const float dx = (gx - std::round(gx)) * spacing;
          const float dy = (gy - std::round(gy)) * spacing;
          paint(y, x, smooth_step(radius - std::sqrt(dx * dx + dy * dy)));
        }
      }
      break;
    }
    case TextureFamily::checker: {
      const float cell = 6.0f + 10.0f * u(rng);
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const float gx = (x * ct + y * st) / cell + phase;
          const float gy = (-x * st + y * ct) / cell + phase;
          const float fx = (gx - std::floor(gx) - 0.5f) * cell;  // signed distance to cell centre line
          const float fy = (gy - std::floor(gy) - 0.5f) * cell;
          const float ex = cell * 0.5f - std::abs(fx);            // distance to nearest vertical edge
          const float ey = cell * 0.5f - std::abs(fy);
          const bool parity = (static_cast<long>(std::floor(gx)) + static_cast<long>(std::floor(gy))) % 2 == 0;
          const float edge = std::min(ex, ey);
          const float t = smooth_step(edge);  // 1 deep inside a cell, 0.5 on its border
          paint(y, x, parity ? t : 1.0f - t);
        }
      }
      break;
    }
  }
  return img;
}

Corpus make_synthetic_corpus(int n, std::span<const TextureFamily> families, std::uint64_t seed,
                             int size) {
  require(n >= 1, ErrorCode::invalid_argument, "corpus size must be >= 1");
  require(!families.empty(), ErrorCode::invalid_argument, "no texture families requested");
  Corpus corpus;
  corpus.provenance = "procedural";
  std::mt19937_64 seeder(seed);
  std::map<TextureFamily, int> counts;
  for (int i = 0; i < n; ++i) {
    const TextureFamily family = families[static_cast<std::size_t>(i) % families.size()];
    const std::uint64_t sample_seed = seeder();
    CorpusEntry entry;
    entry.family = to_string(family);
    char stem[64];
    std::snprintf(stem, sizeof stem, "%s_%04d", to_string(family).c_str(), counts[family]++);
    entry.stem = stem;
    corpus.entries.push_back(std::move(entry));
    corpus.samples.push_back(with_full_mask(render_texture(family, size, sample_seed)));
  }
  return corpus;
}

Corpus ingest(const std::filesystem::path& dir, const IngestOptions& options,
              std::vector<IngestSkip>* skipped) {
  require(std::filesystem::is_directory(dir), ErrorCode::io, "not a directory: " + dir.string());
  Corpus corpus;
  corpus.provenance = "ingested";
  std::map<std::string, std::filesystem::path> images;
  for (const auto& item : std::filesystem::directory_iterator(dir)) {
    if (!item.is_regular_file()) continue;
    const auto& p = item.path();
    const std::string stem = p.stem().string();
    if (!is_image_extension(p.extension().string())) continue;
    if (stem.size() > 5 && stem.ends_with("_mask")) continue;
    images.emplace(stem, p);  // map keeps stems sorted; first extension wins
  }
  auto skip = [&](const std::string& stem, const std::string& reason) {
    spdlog::error("ingest: skipping {}: {}", stem, reason);
    if (skipped) skipped->push_back({stem, reason});
  };
  for (const auto& [stem, image_path] : images) {
    const auto mask_path = dir / (stem + "_mask.png");
    if (!std::filesystem::is_regular_file(mask_path)) {
      skip(stem, "missing mask " + mask_path.filename().string());
      continue;
    }
    if (!matches_keywords(dir, stem, options.keywords)) continue;
    TextureSample sample;
    try {
      sample.image = read_image(image_path);
      sample.mask = read_mask(mask_path);
    } catch (const Error& e) {
      skip(stem, e.what());
      continue;
    }
    if (sample.image.height != sample.mask.height || sample.image.width != sample.mask.width) {
      skip(stem, "mask/image size mismatch");
      continue;
    }
    const double area = static_cast<double>(sample.mask.count()) /
                        (static_cast<double>(sample.mask.height) * sample.mask.width);
    if (area < options.min_mask_fraction || sample.mask.count() == 0) {
      spdlog::info("ingest: {} below mask-area threshold ({:.4f})", stem, area);
      continue;
    }
    corpus.entries.push_back({stem, image_path, mask_path, std::nullopt});
    corpus.samples.push_back(std::move(sample));
  }
  if (corpus.samples.empty()) spdlog::warn("ingest: no usable samples in {}", dir.string());
  return corpus;
}

void save_corpus(const std::filesystem::path& dir, Corpus& corpus) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.jsonl");
  require(static_cast<bool>(manifest), ErrorCode::io, "cannot write corpus manifest in " + dir.string());
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    auto& entry = corpus.entries[i];
    const std::string image_name = entry.stem + ".png";
    const std::string mask_name = entry.stem + "_mask.png";
    write_image(dir / image_name, corpus.samples[i].image);
    write_mask(dir / mask_name, corpus.samples[i].mask);
    entry.image_path = dir / image_name;
    entry.mask_path = dir / mask_name;
    nlohmann::json record{{"image_path", image_name}, {"mask_path", mask_name}};
    if (entry.family) record["family"] = *entry.family;
    manifest << record.dump() << '\n';
  }
}

Corpus load_corpus(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  require(static_cast<bool>(in), ErrorCode::io, "cannot read corpus manifest " + manifest.string());
  const auto dir = manifest.parent_path();
  Corpus corpus;
  corpus.provenance = "manifest";
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    CorpusEntry entry;
    try {
      const auto record = nlohmann::json::parse(line);
      entry.image_path = dir / record.at("image_path").get<std::string>();
      entry.mask_path = dir / record.at("mask_path").get<std::string>();
      if (record.contains("family")) entry.family = record.at("family").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::io, manifest.string() + ": malformed record: " + e.what());
    }
    entry.stem = entry.image_path.stem().string();
    TextureSample sample{read_image(entry.image_path), read_mask(entry.mask_path)};
    validate(sample);
    corpus.entries.push_back(std::move(entry));
    corpus.samples.push_back(std::move(sample));
  }
  return corpus;
}

}  // namespace gramtex
