#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ctn {

enum class ErrorCode {
  parse_error,
  invariant_violation,
  io_error,
  decode_failure,
  unknown_template,
  empty_input,
  backend_unreachable,
  context_overflow,
  dimension_mismatch,
  degenerate_embedding,
  resolution_mismatch,
  role_mismatch,
  empty_stream,
  out_of_vocabulary,
  non_finite,
  insufficient_corpus,
  tool_failure,
  incomplete_matrix,
  quota_exceeded,
  unknown_variant,
  missing_asset,
  config_error,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying a machine-checkable code alongside the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ctn
