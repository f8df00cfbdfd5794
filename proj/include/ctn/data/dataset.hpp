#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace ctn::data {

enum class DatasetTag { msvd, msrvtt, custom };
enum class Split { train, val, test };

std::string_view to_string(DatasetTag tag);
std::string_view to_string(Split split);
DatasetTag parse_dataset_tag(std::string_view s);
Split parse_split(std::string_view s);

struct VideoRecord {
  std::string video_id;
  std::string media_path;
  double duration_s = 0.0;
  DatasetTag dataset_tag = DatasetTag::custom;
  Split split = Split::train;
};

struct DescriptiveCaptionSet {
  std::string video_id;
  std::vector<std::string> captions;

  void validate() const;
};

/// Upper bound on words per cause or effect part.
constexpr std::size_t kMaxPartWords = 15;

struct CtnCaption {
  std::string video_id;
  std::string cause;
  std::string effect;
  std::optional<double> emscore;
  std::optional<int> attempts;

  /// Throws invariant_violation naming the part and video when a part is empty
  /// or longer than kMaxPartWords whitespace-separated words.
  void validate() const;
};

/// cause + " " + effect, verbatim.
std::string combine_caption(const CtnCaption& c);

struct SplitCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
  bool operator==(const SplitCounts&) const = default;
};

class DatasetManifest {
 public:
  std::vector<VideoRecord> records;
  std::map<std::string, DescriptiveCaptionSet> caption_index;
  std::map<std::string, CtnCaption> ctn_index;

  void validate() const;
  SplitCounts split_counts() const;
  const VideoRecord& find(std::string_view video_id) const;
  std::vector<VideoRecord> in_split(Split split) const;
  /// Training-ready pairs: records in the split that have a CTN caption.
  std::vector<std::pair<VideoRecord, CtnCaption>> labelled(Split split) const;
};

/// Reads manifest.jsonl plus sibling captions.json / ctn.json when present.
DatasetManifest load_manifest(const std::filesystem::path& path);
/// Writes the manifest and non-empty sidecars next to it in canonical form.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

nlohmann::json ctn_to_json(const CtnCaption& c);
CtnCaption ctn_from_json(const std::string& video_id, const nlohmann::json& j);
std::map<std::string, CtnCaption> load_ctn_file(const std::filesystem::path& path);
void save_ctn_file(const std::map<std::string, CtnCaption>& index, const std::filesystem::path& path);
std::map<std::string, DescriptiveCaptionSet> load_captions_file(const std::filesystem::path& path);

}  // namespace ctn::data
