#include "latent_atlas/error.hpp"

namespace latent_atlas {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::parse: return "parse";
    case ErrorCode::io: return "io";
    case ErrorCode::corrupt_file: return "corrupt_file";
    case ErrorCode::empty_input: return "empty_input";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::duplicate_id: return "duplicate_id";
    case ErrorCode::out_of_range: return "out_of_range";
    case ErrorCode::degenerate: return "degenerate";
    case ErrorCode::checksum_mismatch: return "checksum_mismatch";
    case ErrorCode::non_convergence: return "non_convergence";
    case ErrorCode::backend_transport: return "backend_transport";
    case ErrorCode::backend_status: return "backend_status";
    case ErrorCode::backend_payload: return "backend_payload";
    case ErrorCode::backend_dimension: return "backend_dimension";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::internal: return "internal";
  }
  return "unknown";
}

ErrorCategory category_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument:
    case ErrorCode::out_of_range:
      return ErrorCategory::usage;
    case ErrorCode::io:
    case ErrorCode::not_found:
      return ErrorCategory::io;
    case ErrorCode::parse:
    case ErrorCode::corrupt_file:
    case ErrorCode::empty_input:
    case ErrorCode::dimension_mismatch:
    case ErrorCode::non_finite:
    case ErrorCode::duplicate_id:
    case ErrorCode::degenerate:
    case ErrorCode::checksum_mismatch:
    case ErrorCode::non_convergence:
    case ErrorCode::conflict:
      return ErrorCategory::validation;
    case ErrorCode::backend_transport:
    case ErrorCode::backend_status:
    case ErrorCode::backend_payload:
    case ErrorCode::backend_dimension:
      return ErrorCategory::backend;
    case ErrorCode::internal:
      return ErrorCategory::internal;
  }
  return ErrorCategory::internal;
}

}  // namespace latent_atlas
