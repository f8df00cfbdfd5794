#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ctn/metrics/metrics.hpp"

namespace ctn::metrics {

struct SpiceReport {
  /// "ok" or "skipped" (tool absent); never a silent zero.
  std::string status = "skipped";
  std::map<std::string, double> per_pair;
  double mean = 0.0;
};

/// Writes [{"image_id", "test", "refs"}], runs `<tool> <input.json> -out <output.json>`,
/// and reads [{"image_id", "scores": {"All": {"f": ...}}}].
/// A crash raises tool_failure with the tool's stderr; malformed output raises parse_error.
SpiceReport spice_adapter(const std::vector<EvalPair>& pairs, const std::filesystem::path& tool_path,
                          const std::filesystem::path& work_dir);

/// Copies SPICE scores into matching report rows and sets the report status.
void attach_spice(EvalReport& report, const SpiceReport& spice);

}  // namespace ctn::metrics
