#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace gramtex {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using MatrixF = Eigen::MatrixXf;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Spatial data is stored positions x channels, position k = y * width + x.

/// RGB image with values in [0,1]; pixels is (height*width) x 3.
struct ImageRGB {
  int height = 0;
  int width = 0;
  MatrixF pixels;

  ImageRGB() = default;
  ImageRGB(int h, int w) : height(h), width(w), pixels(MatrixF::Zero(h * w, 3)) {}

  float& at(int y, int x, int c) { return pixels(y * width + x, c); }
  float at(int y, int x, int c) const { return pixels(y * width + x, c); }
};

/// Binary grid; 1 marks the texture region.
struct BinaryGrid {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> cells;

  BinaryGrid() = default;
  BinaryGrid(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), cells(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return cells[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return cells[static_cast<std::size_t>(y) * width + x]; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto c : cells) n += c != 0;
    return n;
  }
};

struct TextureSample {
  ImageRGB image;
  BinaryGrid mask;
};

/// Checks the TextureSample invariants; throws gramtex::Error.
void validate(const TextureSample& sample);

TextureSample with_full_mask(ImageRGB image);

}  // namespace gramtex
