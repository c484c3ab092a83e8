#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gramtex/types.hpp"

namespace gramtex {

enum class TextureFamily { stripes, dots, checker };

std::string to_string(TextureFamily family);
TextureFamily family_from_string(const std::string& name);

struct CorpusEntry {
  std::string stem;
  std::filesystem::path image_path;  // empty for samples not yet written
  std::filesystem::path mask_path;
  std::optional<std::string> family;
};

struct Corpus {
  std::string provenance;  // "ingested" or "procedural"
  std::vector<CorpusEntry> entries;
  std::vector<TextureSample> samples;

  std::size_t size() const { return samples.size(); }
};

struct IngestOptions {
  std::vector<std::string> keywords;  // empty keeps everything
  double min_mask_fraction = 0.01;
};

struct IngestSkip {
  std::string stem;
  std::string reason;
};

/// Collects `<stem>.{png,jpg,jpeg}` + `<stem>_mask.png` pairs from `dir` in
/// sorted stem order. A pair is kept when a keyword occurs (case-insensitive)
/// in its `<stem>.txt` attribute sidecar, or in the stem when no sidecar
/// exists, and when its mask covers at least `min_mask_fraction` of the pixels.
/// Unreadable or mismatched pairs are skipped and logged.
Corpus ingest(const std::filesystem::path& dir, const IngestOptions& options = {},
              std::vector<IngestSkip>* skipped = nullptr);

/// One procedural texture with randomised orientation, frequency and colours.
ImageRGB render_texture(TextureFamily family, int size, std::uint64_t seed);

/// n textures assigned to `families` round-robin, each with a full mask.
Corpus make_synthetic_corpus(int n, std::span<const TextureFamily> families, std::uint64_t seed,
                             int size = 64);

/// Writes images, masks and a line-delimited manifest (`manifest.jsonl`)
/// with records {image_path, mask_path, family?}. Paths are relative to `dir`.
void save_corpus(const std::filesystem::path& dir, Corpus& corpus);
/// Reads a corpus back from its manifest.
Corpus load_corpus(const std::filesystem::path& manifest);

}  // namespace gramtex
