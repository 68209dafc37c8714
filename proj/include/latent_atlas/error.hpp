#pragma once

#include <stdexcept>
#include <string>

namespace latent_atlas {

enum class ErrorCode {
  invalid_argument,
  parse,
  io,
  corrupt_file,
  empty_input,
  dimension_mismatch,
  non_finite,
  duplicate_id,
  out_of_range,
  degenerate,
  checksum_mismatch,
  non_convergence,
  backend_transport,
  backend_status,
  backend_payload,
  backend_dimension,
  conflict,
  not_found,
  internal,
};

// Coarse failure class, used by the CLI to pick an exit code.
enum class ErrorCategory { usage = 1, io = 2, validation = 3, backend = 4, internal = 5 };

const char* to_string(ErrorCode code);
ErrorCategory category_of(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return category_of(code_); }

 private:
  ErrorCode code_;
};

}  // namespace latent_atlas
