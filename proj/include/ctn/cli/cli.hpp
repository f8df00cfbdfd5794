#pragma once

#include <array>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace ctn::cli {

enum ExitCode : int {
  kOk = 0,
  kConfigError = 1,
  kRuntimeFailure = 2,
  kPartial = 3,
};

inline constexpr std::array<std::string_view, 10> kCommands = {
    "gen",   "filter-stats", "train-stage1",    "train-stage2",     "ablate",
    "eval",  "judge",        "label",           "humaneval-serve",  "export-embeddings",
};

/// Every accepted key with its default value.
nlohmann::json default_config();

/// Overlays src onto dst. Keys absent from dst and type changes are config errors.
void merge_config(nlohmann::json& dst, const nlohmann::json& src, const std::string& where = "");

/// Applies "a.b.c=value"; the value is read as JSON when it parses, else as a string.
void apply_override(nlohmann::json& cfg, std::string_view assignment);

/// Full command line without the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int main(int argc, char** argv);

}  // namespace ctn::cli
