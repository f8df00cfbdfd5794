#include "ctn/data/dataset.hpp"

#include <set>

#include "ctn/error.hpp"
#include "ctn/text/tokenizer.hpp"
#include "ctn/util/jsonl.hpp"

namespace ctn::data {

std::string_view to_string(DatasetTag tag) {
  switch (tag) {
    case DatasetTag::msvd: return "MSVD";
    case DatasetTag::msrvtt: return "MSRVTT";
    case DatasetTag::custom: return "custom";
  }
  return "custom";
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

DatasetTag parse_dataset_tag(std::string_view s) {
  if (s == "MSVD") return DatasetTag::msvd;
  if (s == "MSRVTT") return DatasetTag::msrvtt;
  if (s == "custom") return DatasetTag::custom;
  throw Error(ErrorCode::parse_error, "unknown dataset_tag '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw Error(ErrorCode::parse_error, "unknown split '" + std::string(s) + "'");
}

void DescriptiveCaptionSet::validate() const {
  if (captions.empty()) throw Error(ErrorCode::invariant_violation, video_id + ": empty caption list");
  for (const auto& c : captions) {
    if (text::trim(c).empty()) throw Error(ErrorCode::invariant_violation, video_id + ": blank caption");
  }
}

void CtnCaption::validate() const {
  for (const auto& [label, part] : {std::pair{"cause", &cause}, std::pair{"effect", &effect}}) {
    const std::size_t n = text::word_count(*part);
    if (n == 0) throw Error(ErrorCode::invariant_violation, video_id + ": empty " + label);
    if (n > kMaxPartWords) {
      throw Error(ErrorCode::invariant_violation,
                  video_id + ": " + label + " has " + std::to_string(n) + " words (max 15)");
    }
  }
}

std::string combine_caption(const CtnCaption& c) {
  c.validate();
  return c.cause + " " + c.effect;
}

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  for (const auto& r : records) {
    if (r.video_id.empty()) throw Error(ErrorCode::invariant_violation, "record with empty video_id");
    if (!ids.insert(r.video_id).second) throw Error(ErrorCode::invariant_violation, "duplicate video_id " + r.video_id);
    if (!(r.duration_s > 0.0)) throw Error(ErrorCode::invariant_violation, r.video_id + ": duration_s must be > 0");
  }
  for (const auto& [id, ctn] : ctn_index) {
    if (!ids.count(id)) throw Error(ErrorCode::invariant_violation, "ctn entry for unknown video_id " + id);
    ctn.validate();
  }
  for (const auto& [id, caps] : caption_index) caps.validate();
}

SplitCounts DatasetManifest::split_counts() const {
  SplitCounts c;
  for (const auto& r : records) {
    switch (r.split) {
      case Split::train: ++c.train; break;
      case Split::val: ++c.val; break;
      case Split::test: ++c.test; break;
    }
  }
  return c;
}

const VideoRecord& DatasetManifest::find(std::string_view video_id) const {
  for (const auto& r : records)
    if (r.video_id == video_id) return r;
  throw Error(ErrorCode::missing_asset, "unknown video_id " + std::string(video_id));
}

std::vector<VideoRecord> DatasetManifest::in_split(Split split) const {
  std::vector<VideoRecord> out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(r);
  return out;
}

std::vector<std::pair<VideoRecord, CtnCaption>> DatasetManifest::labelled(Split split) const {
  std::vector<std::pair<VideoRecord, CtnCaption>> out;
  for (const auto& r : records) {
    if (r.split != split) continue;
    auto it = ctn_index.find(r.video_id);
    if (it != ctn_index.end()) out.emplace_back(r, it->second);
  }
  return out;
}

nlohmann::json ctn_to_json(const CtnCaption& c) {
  nlohmann::json j{{"Cause", c.cause}, {"Effect", c.effect}};
  if (c.emscore) j["emscore"] = *c.emscore;
  if (c.attempts) j["attempts"] = *c.attempts;
  return j;
}

CtnCaption ctn_from_json(const std::string& video_id, const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("Cause") || !j.contains("Effect") || !j["Cause"].is_string() ||
      !j["Effect"].is_string()) {
    throw Error(ErrorCode::parse_error, video_id + ": ctn entry needs string Cause and Effect");
  }
  CtnCaption c{video_id, j["Cause"].get<std::string>(), j["Effect"].get<std::string>(), std::nullopt, std::nullopt};
  if (j.contains("emscore")) c.emscore = j["emscore"].get<double>();
  if (j.contains("attempts")) c.attempts = j["attempts"].get<int>();
  return c;
}

std::map<std::string, CtnCaption> load_ctn_file(const std::filesystem::path& path) {
  const auto j = util::read_json(path);
  if (!j.is_object()) throw Error(ErrorCode::parse_error, path.string() + ": expected an object");
  std::map<std::string, CtnCaption> out;
  for (const auto& [id, entry] : j.items()) out.emplace(id, ctn_from_json(id, entry));
  return out;
}

void save_ctn_file(const std::map<std::string, CtnCaption>& index, const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [id, c] : index) j[id] = ctn_to_json(c);
  util::write_json(path, j);
}

std::map<std::string, DescriptiveCaptionSet> load_captions_file(const std::filesystem::path& path) {
  const auto j = util::read_json(path);
  if (!j.is_object()) throw Error(ErrorCode::parse_error, path.string() + ": expected an object");
  std::map<std::string, DescriptiveCaptionSet> out;
  for (const auto& [id, caps] : j.items()) {
    if (!caps.is_array()) throw Error(ErrorCode::parse_error, id + ": captions must be an array");
    out.emplace(id, DescriptiveCaptionSet{id, caps.get<std::vector<std::string>>()});
  }
  return out;
}

namespace {

VideoRecord record_from_json(const nlohmann::json& j, std::size_t lineno) {
  auto need = [&](const char* key) -> const nlohmann::json& {
    if (!j.is_object() || !j.contains(key))
      throw Error(ErrorCode::parse_error, "line " + std::to_string(lineno) + ": missing field '" + key + "'");
    return j.at(key);
  };
  try {
    VideoRecord r;
    r.video_id = need("video_id").get<std::string>();
    r.media_path = need("media_path").get<std::string>();
    r.duration_s = need("duration_s").get<double>();
    r.dataset_tag = parse_dataset_tag(need("dataset_tag").get<std::string>());
    r.split = parse_split(need("split").get<std::string>());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, "line " + std::to_string(lineno) + ": " + e.what());
  }
}

}  // namespace

DatasetManifest load_manifest(const std::filesystem::path& path) {
  const auto lines = util::read_jsonl(path);
  if (lines.empty()) throw Error(ErrorCode::parse_error, path.string() + ": empty manifest");
  DatasetManifest m;
  std::size_t lineno = 0;
  for (const auto& j : lines) m.records.push_back(record_from_json(j, ++lineno));
  const auto dir = path.parent_path();
  if (std::filesystem::exists(dir / "captions.json")) m.caption_index = load_captions_file(dir / "captions.json");
  if (std::filesystem::exists(dir / "ctn.json")) m.ctn_index = load_ctn_file(dir / "ctn.json");
  m.validate();
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  manifest.validate();
  std::string body;
  for (const auto& r : manifest.records) {
    nlohmann::json j{{"video_id", r.video_id},
                     {"media_path", r.media_path},
                     {"duration_s", r.duration_s},
                     {"dataset_tag", to_string(r.dataset_tag)},
                     {"split", to_string(r.split)}};
    body += j.dump() + "\n";
  }
  util::write_text(path, body);
  const auto dir = path.parent_path();
  if (!manifest.caption_index.empty()) {
    nlohmann::json caps = nlohmann::json::object();
    for (const auto& [id, set] : manifest.caption_index) caps[id] = set.captions;
    util::write_json(dir / "captions.json", caps);
  }
  if (!manifest.ctn_index.empty()) save_ctn_file(manifest.ctn_index, dir / "ctn.json");
}

}  // namespace ctn::data
