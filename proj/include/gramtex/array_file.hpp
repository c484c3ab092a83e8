#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gramtex/types.hpp"

namespace H5 {
class H5File;
}

namespace gramtex {

enum class StoragePrecision { float32, float64 };

struct NamedArray {
  std::vector<std::size_t> shape;
  std::vector<double> values;  // row-major
};

/// Container of named n-d arrays plus a JSON metadata record, backed by HDF5.
/// Array names are slash-separated paths ("gram/relu1_1"); intermediate
/// groups are created on demand.
class ArrayFile {
 public:
  static ArrayFile create(const std::filesystem::path& path);
  static ArrayFile open(const std::filesystem::path& path);

  ArrayFile(ArrayFile&&) noexcept;
  ArrayFile& operator=(ArrayFile&&) noexcept;
  ~ArrayFile();

  void write(const std::string& name, std::span<const std::size_t> shape,
             std::span<const double> values, StoragePrecision precision);
  void write_matrix(const std::string& name, const Matrix& m,
                    StoragePrecision precision);
  void write_vector(const std::string& name, const Vector& v,
                    StoragePrecision precision);

  NamedArray read(const std::string& name) const;
  Matrix read_matrix(const std::string& name) const;  // 1-d arrays read as n x 1
  Vector read_vector(const std::string& name) const;

  bool contains(const std::string& name) const;
  std::vector<std::string> names() const;

  void set_metadata(const nlohmann::json& metadata);
  nlohmann::json metadata() const;

 private:
  explicit ArrayFile(std::unique_ptr<H5::H5File> file, std::filesystem::path path);

  std::unique_ptr<H5::H5File> file_;
  std::filesystem::path path_;
};

}  // namespace gramtex
