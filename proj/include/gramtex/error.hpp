#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gramtex {

enum class ErrorCode {
  invalid_argument,
  dimension_mismatch,
  empty_layer_spec,
  empty_mask_region,
  backbone_weights,
  image_too_small,
  insufficient_samples,
  non_finite_loss,
  io,
  invalid_config,
  unknown_command,
  numerical,
};

std::string_view to_string(ErrorCode code);

/// Base exception for all library failures. The code is stable and is what
/// the CLI prints on its machine-parsable error line.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised when a (downsampled) texture mask has no active cell at some layer.
class EmptyMaskRegion : public Error {
 public:
  explicit EmptyMaskRegion(std::string layer_id)
      : Error(ErrorCode::empty_mask_region,
              "empty mask region at layer " + layer_id),
        layer_id_(std::move(layer_id)) {}

  const std::string& layer_id() const noexcept { return layer_id_; }

 private:
  std::string layer_id_;
};

class NonFiniteLoss : public Error {
 public:
  explicit NonFiniteLoss(const std::string& what)
      : Error(ErrorCode::non_finite_loss, what) {}
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace gramtex
