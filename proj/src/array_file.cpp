#include "gramtex/array_file.hpp"

#include <H5Cpp.h>

#include <numeric>

#include "gramtex/error.hpp"

namespace gramtex {
namespace {

constexpr const char* kMetadataAttribute = "metadata";

void quiet_hdf5() {
  static const bool once = [] {
    H5::Exception::dontPrint();
    return true;
  }();
  (void)once;
}

std::size_t element_count(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

herr_t collect_dataset(hid_t, const char* name, const H5O_info_t* info, void* out) {
  if (info->type == H5O_TYPE_DATASET) {
    static_cast<std::vector<std::string>*>(out)->emplace_back(name);
  }
  return 0;
}

// Groups are created explicitly (not as intermediate links) so that object
// timestamps can be disabled and identical content gives identical bytes.
void create_parent_groups(H5::H5File& file, const std::string& name) {
  const hid_t props = H5Pcreate(H5P_GROUP_CREATE);
  H5Pset_obj_track_times(props, false);
  for (auto slash = name.find('/', 1); slash != std::string::npos; slash = name.find('/', slash + 1)) {
    const std::string group = name.substr(0, slash);
    if (H5Lexists(file.getId(), group.c_str(), H5P_DEFAULT) <= 0) {
      const hid_t g = H5Gcreate2(file.getId(), group.c_str(), H5P_DEFAULT, props, H5P_DEFAULT);
      if (g < 0) {
        H5Pclose(props);
        fail(ErrorCode::io, "cannot create group " + group);
      }
      H5Gclose(g);
    }
  }
  H5Pclose(props);
}

}  // namespace

ArrayFile::ArrayFile(std::unique_ptr<H5::H5File> file, std::filesystem::path path)
    : file_(std::move(file)), path_(std::move(path)) {}

ArrayFile::ArrayFile(ArrayFile&&) noexcept = default;
ArrayFile& ArrayFile::operator=(ArrayFile&&) noexcept = default;
ArrayFile::~ArrayFile() = default;

ArrayFile ArrayFile::create(const std::filesystem::path& path) {
  quiet_hdf5();
  try {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    return ArrayFile(std::make_unique<H5::H5File>(path.string(), H5F_ACC_TRUNC), path);
  } catch (const H5::Exception& e) {
    fail(ErrorCode::io, "cannot create " + path.string() + ": " + e.getDetailMsg());
  }
}

ArrayFile ArrayFile::open(const std::filesystem::path& path) {
  quiet_hdf5();
  if (!std::filesystem::exists(path)) fail(ErrorCode::io, "no such file: " + path.string());
  try {
    return ArrayFile(std::make_unique<H5::H5File>(path.string(), H5F_ACC_RDONLY), path);
  } catch (const H5::Exception& e) {
    fail(ErrorCode::io, "cannot open " + path.string() + ": " + e.getDetailMsg());
  }
}

void ArrayFile::write(const std::string& name, std::span<const std::size_t> shape,
                      std::span<const double> values, StoragePrecision precision) {
  require(element_count(shape) == values.size(), ErrorCode::dimension_mismatch,
          "array " + name + ": shape does not match value count");
  try {
    std::vector<hsize_t> dims(shape.begin(), shape.end());
    H5::DataSpace space(static_cast<int>(dims.size()), dims.data());
    create_parent_groups(*file_, name);
    H5::DSetCreatPropList props;
    H5Pset_obj_track_times(props.getId(), false);
    if (precision == StoragePrecision::float32) {
      std::vector<float> narrowed(values.begin(), values.end());
      H5::DataSet ds = file_->createDataSet(name, H5::PredType::IEEE_F32LE, space,
                                            props);
      ds.write(narrowed.data(), H5::PredType::NATIVE_FLOAT);
    } else {
      H5::DataSet ds = file_->createDataSet(name, H5::PredType::IEEE_F64LE, space,
                                            props);
      ds.write(values.data(), H5::PredType::NATIVE_DOUBLE);
    }
  } catch (const H5::Exception& e) {
    fail(ErrorCode::io, "cannot write " + name + " to " + path_.string() + ": " +
                            e.getDetailMsg());
  }
}

void ArrayFile::write_matrix(const std::string& name, const Matrix& m,
                             StoragePrecision precision) {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> row_major = m;
  const std::array<std::size_t, 2> shape{static_cast<std::size_t>(m.rows()),
                                         static_cast<std::size_t>(m.cols())};
  write(name, shape, std::span<const double>(row_major.data(), row_major.size()), precision);
}

void ArrayFile::write_vector(const std::string& name, const Vector& v,
                             StoragePrecision precision) {
  const std::array<std::size_t, 1> shape{static_cast<std::size_t>(v.size())};
  write(name, shape, std::span<const double>(v.data(), v.size()), precision);
}

NamedArray ArrayFile::read(const std::string& name) const {
  if (!contains(name)) fail(ErrorCode::io, path_.string() + ": missing array " + name);
  try {
    H5::DataSet ds = file_->openDataSet(name);
    H5::DataSpace space = ds.getSpace();
    const int rank = space.getSimpleExtentNdims();
    std::vector<hsize_t> dims(static_cast<std::size_t>(rank));
    space.getSimpleExtentDims(dims.data());
    NamedArray out;
    out.shape.assign(dims.begin(), dims.end());
    out.values.resize(element_count(out.shape));
    if (!out.values.empty()) ds.read(out.values.data(), H5::PredType::NATIVE_DOUBLE);
    return out;
  } catch (const H5::Exception& e) {
    fail(ErrorCode::io, "cannot read " + name + " from " + path_.string() + ": " +
                            e.getDetailMsg());
  }
}

Matrix ArrayFile::read_matrix(const std::string& name) const {
  NamedArray a = read(name);
  require(a.shape.size() == 1 || a.shape.size() == 2, ErrorCode::dimension_mismatch,
          name + " is not a matrix");
  const auto rows = static_cast<Eigen::Index>(a.shape[0]);
  const auto cols = a.shape.size() == 2 ? static_cast<Eigen::Index>(a.shape[1]) : 1;
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      a.values.data(), rows, cols);
}

Vector ArrayFile::read_vector(const std::string& name) const {
  NamedArray a = read(name);
  return Eigen::Map<const Vector>(a.values.data(), static_cast<Eigen::Index>(a.values.size()));
}

bool ArrayFile::contains(const std::string& name) const {
  // Walk the path so that missing intermediate groups are not an error.
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = name.find('/', pos);
    const std::string prefix = name.substr(0, next);
    if (H5Lexists(file_->getId(), prefix.c_str(), H5P_DEFAULT) <= 0) return false;
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return H5Oexists_by_name(file_->getId(), name.c_str(), H5P_DEFAULT) > 0;
}

std::vector<std::string> ArrayFile::names() const {
  std::vector<std::string> out;
  H5Ovisit(file_->getId(), H5_INDEX_NAME, H5_ITER_INC, collect_dataset, &out);
  return out;
}

void ArrayFile::set_metadata(const nlohmann::json& metadata) {
  const std::string text = metadata.dump();
  try {
    H5::Group root = file_->openGroup("/");
    if (root.attrExists(kMetadataAttribute)) root.removeAttr(kMetadataAttribute);
    H5::StrType type(H5::PredType::C_S1, text.size() + 1);
    H5::Attribute attr = root.createAttribute(kMetadataAttribute, type, H5::DataSpace(H5S_SCALAR));
    attr.write(type, text.c_str());
  } catch (const H5::Exception& e) {
    fail(ErrorCode::io, "cannot write metadata to " + path_.string() + ": " + e.getDetailMsg());
  }
}

nlohmann::json ArrayFile::metadata() const {
  try {
    H5::Group root = file_->openGroup("/");
    if (!root.attrExists(kMetadataAttribute)) {
      fail(ErrorCode::io, path_.string() + ": missing metadata record");
    }
    H5::Attribute attr = root.openAttribute(kMetadataAttribute);
    std::string text;
    attr.read(attr.getStrType(), text);
    return nlohmann::json::parse(text);
  } catch (const H5::Exception& e) {
    fail(ErrorCode::io, "cannot read metadata from " + path_.string() + ": " + e.getDetailMsg());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::io, path_.string() + ": malformed metadata: " + e.what());
  }
}

}  // namespace gramtex
