#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

namespace ctn::util {

/// Parses one JSON value per non-blank line; errors carry the 1-based line number.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Thread-safe append-only JSON-lines sink; each record is flushed.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::filesystem::path& path, bool append = true);
  void write(const nlohmann::json& record);

 private:
  std::mutex mu_;
  std::ofstream out_;
};

}  // namespace ctn::util
