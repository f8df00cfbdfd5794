#include "ctn/error.hpp"

namespace ctn {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::parse_error: return "parse_error";
    case ErrorCode::invariant_violation: return "invariant_violation";
    case ErrorCode::io_error: return "io_error";
    case ErrorCode::decode_failure: return "decode_failure";
    case ErrorCode::unknown_template: return "unknown_template";
    case ErrorCode::empty_input: return "empty_input";
    case ErrorCode::backend_unreachable: return "backend_unreachable";
    case ErrorCode::context_overflow: return "context_overflow";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::degenerate_embedding: return "degenerate_embedding";
    case ErrorCode::resolution_mismatch: return "resolution_mismatch";
    case ErrorCode::role_mismatch: return "role_mismatch";
    case ErrorCode::empty_stream: return "empty_stream";
    case ErrorCode::out_of_vocabulary: return "out_of_vocabulary";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::insufficient_corpus: return "insufficient_corpus";
    case ErrorCode::tool_failure: return "tool_failure";
    case ErrorCode::incomplete_matrix: return "incomplete_matrix";
    case ErrorCode::quota_exceeded: return "quota_exceeded";
    case ErrorCode::unknown_variant: return "unknown_variant";
    case ErrorCode::missing_asset: return "missing_asset";
    case ErrorCode::config_error: return "config_error";
  }
  return "unknown";
}

}  // namespace ctn
