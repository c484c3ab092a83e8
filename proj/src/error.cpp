#include "gramtex/error.hpp"

namespace gramtex {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::empty_layer_spec: return "empty_layer_spec";
    case ErrorCode::empty_mask_region: return "empty_mask_region";
    case ErrorCode::backbone_weights: return "backbone_weights";
    case ErrorCode::image_too_small: return "image_too_small";
    case ErrorCode::insufficient_samples: return "insufficient_samples";
    case ErrorCode::non_finite_loss: return "non_finite_loss";
    case ErrorCode::io: return "io";
    case ErrorCode::invalid_config: return "invalid_config";
    case ErrorCode::unknown_command: return "unknown_command";
    case ErrorCode::numerical: return "numerical";
  }
  return "unknown";
}

}  // namespace gramtex
