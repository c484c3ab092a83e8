#pragma once

#include <filesystem>

#include "gramtex/types.hpp"

namespace gramtex {

/// Reads an 8- or 16-bit PNG/JPEG as RGB in [0,1].
ImageRGB read_image(const std::filesystem::path& path);
/// Writes an 8-bit image; values are clamped to [0,1] and rounded.
void write_image(const std::filesystem::path& path, const ImageRGB& image);

/// Single-channel mask; values above half range are texture.
BinaryGrid read_mask(const std::filesystem::path& path);
/// Writes a 0/255 single-channel PNG.
void write_mask(const std::filesystem::path& path, const BinaryGrid& mask);

/// Area-averaged image resize and nearest-neighbour mask resize.
TextureSample resize_sample(const TextureSample& sample, int height, int width);

}  // namespace gramtex
