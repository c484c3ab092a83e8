#include "gramtex/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "gramtex/error.hpp"

namespace gramtex {
namespace {

cv::Mat read_raw(const std::filesystem::path& path, int flags) {
  require(std::filesystem::is_regular_file(path), ErrorCode::io, "no such file " + path.string());
  cv::Mat m;
  try {
    m = cv::imread(path.string(), flags);
  } catch (const cv::Exception& e) {
    fail(ErrorCode::io, "cannot decode " + path.string() + ": " + e.what());
  }
  require(!m.empty(), ErrorCode::io, "cannot decode " + path.string());
  return m;
}

double depth_scale(const cv::Mat& m) {
  switch (m.depth()) {
    case CV_8U: return 1.0 / 255.0;
    case CV_16U: return 1.0 / 65535.0;
    default: fail(ErrorCode::io, "unsupported image bit depth");
  }
}

void write_raw(const std::filesystem::path& path, const cv::Mat& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), m);
  } catch (const cv::Exception& e) {
    fail(ErrorCode::io, "cannot write " + path.string() + ": " + e.what());
  }
  require(ok, ErrorCode::io, "cannot write " + path.string());
}

ImageRGB from_bgr(const cv::Mat& bgr32) {
  ImageRGB img(bgr32.rows, bgr32.cols);
  for (int y = 0; y < bgr32.rows; ++y) {
    const auto* row = bgr32.ptr<cv::Vec3f>(y);
    for (int x = 0; x < bgr32.cols; ++x) {
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = row[x][2 - c];
    }
  }
  return img;
}

cv::Mat to_bgr(const ImageRGB& image) {
  cv::Mat m(image.height, image.width, CV_32FC3);
  for (int y = 0; y < image.height; ++y) {
    auto* row = m.ptr<cv::Vec3f>(y);
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) row[x][2 - c] = image.at(y, x, c);
    }
  }
  return m;
}

}  // namespace

ImageRGB read_image(const std::filesystem::path& path) {
  const cv::Mat raw = read_raw(path, cv::IMREAD_ANYDEPTH | cv::IMREAD_COLOR);
  cv::Mat f;
  raw.convertTo(f, CV_32FC3, depth_scale(raw));
  return from_bgr(f);
}

void write_image(const std::filesystem::path& path, const ImageRGB& image) {
  require(image.height > 0 && image.width > 0, ErrorCode::invalid_argument, "empty image");
  cv::Mat out;
  to_bgr(image).convertTo(out, CV_8UC3, 255.0);  // saturating cast clamps to [0,255]
  write_raw(path, out);
}

BinaryGrid read_mask(const std::filesystem::path& path) {
  const cv::Mat raw = read_raw(path, cv::IMREAD_ANYDEPTH | cv::IMREAD_GRAYSCALE);
  const double half = raw.depth() == CV_16U ? 32767.5 : 127.5;
  BinaryGrid mask(raw.rows, raw.cols);
  for (int y = 0; y < raw.rows; ++y) {
    for (int x = 0; x < raw.cols; ++x) {
      const double v = raw.depth() == CV_16U ? raw.at<std::uint16_t>(y, x) : raw.at<std::uint8_t>(y, x);
      mask.at(y, x) = v > half ? 1 : 0;
    }
  }
  return mask;
}

void write_mask(const std::filesystem::path& path, const BinaryGrid& mask) {
  cv::Mat m(mask.height, mask.width, CV_8UC1);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) m.at<std::uint8_t>(y, x) = mask.at(y, x) ? 255 : 0;
  }
  write_raw(path, m);
}

TextureSample resize_sample(const TextureSample& sample, int height, int width) {
  require(height > 0 && width > 0, ErrorCode::invalid_argument, "resize target must be positive");
  if (sample.image.height == height && sample.image.width == width) return sample;
  cv::Mat img;
  cv::resize(to_bgr(sample.image), img, cv::Size(width, height), 0, 0, cv::INTER_AREA);
  cv::Mat mask(sample.mask.height, sample.mask.width, CV_8UC1,
               const_cast<std::uint8_t*>(sample.mask.cells.data()));
  cv::Mat mask_resized;
  cv::resize(mask, mask_resized, cv::Size(width, height), 0, 0, cv::INTER_NEAREST);
  TextureSample out;
  out.image = from_bgr(img);
  out.mask = BinaryGrid(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) out.mask.at(y, x) = mask_resized.at<std::uint8_t>(y, x) ? 1 : 0;
  }
  return out;
}

}  // namespace gramtex
