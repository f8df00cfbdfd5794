#include "ctn/prompt/prompt.hpp"

#include <cstdlib>

#include <json.hpp>

#include "ctn/error.hpp"
#include "ctn/text/tokenizer.hpp"
#include "ctn/util/jsonl.hpp"

namespace ctn::prompt {

std::string_view to_string(TemplateId id) {
  switch (id) {
    case TemplateId::fewshot_v1: return "fewshot_v1";
    case TemplateId::zeroshot_minimal: return "zeroshot_minimal";
    case TemplateId::zeroshot_concise: return "zeroshot_concise";
    case TemplateId::zeroshot_clear: return "zeroshot_clear";
    case TemplateId::zeroshot_norules: return "zeroshot_norules";
    case TemplateId::abl_no_grounding: return "abl_no_grounding";
    case TemplateId::abl_no_temporal: return "abl_no_temporal";
    case TemplateId::abl_no_limit: return "abl_no_limit";
    case TemplateId::abl_no_plain: return "abl_no_plain";
    case TemplateId::abl_no_conclusions: return "abl_no_conclusions";
    case TemplateId::abl_no_relevance: return "abl_no_relevance";
  }
  return "unknown";
}

TemplateId parse_template_id(std::string_view name) {
  for (auto id : kAllTemplates)
    if (to_string(id) == name) return id;
  throw Error(ErrorCode::unknown_template, std::string(name));
}

std::string_view to_string(ParseFailure f) {
  switch (f) {
    case ParseFailure::not_json: return "not_json";
    case ParseFailure::multiple_objects: return "multiple_objects";
    case ParseFailure::missing_keys: return "missing_keys";
    case ParseFailure::extra_text: return "extra_text";
    case ParseFailure::word_limit: return "word_limit";
    case ParseFailure::empty_part: return "empty_part";
  }
  return "unknown";
}

std::filesystem::path default_template_dir() {
  if (const char* env = std::getenv("CTN_TEMPLATE_DIR")) return env;
#ifdef CTN_DEFAULT_TEMPLATE_DIR
  return CTN_DEFAULT_TEMPLATE_DIR;
#else
  return "templates";
#endif
}

TemplateLibrary::TemplateLibrary(const std::filesystem::path& dir) : dir_(dir) {
  for (auto id : kAllTemplates) {
    const auto path = dir / (std::string(to_string(id)) + ".txt");
    if (!std::filesystem::exists(path)) throw Error(ErrorCode::missing_asset, "template file " + path.string());
    std::string body = util::read_text(path);
    const auto first = body.find(kPlaceholder);
    if (first == std::string::npos || body.find(kPlaceholder, first + 1) != std::string::npos)
      throw Error(ErrorCode::invariant_violation, path.string() + ": placeholder must appear exactly once");
    templates_.emplace(id, PromptTemplate{id, std::move(body)});
  }
}

const PromptTemplate& TemplateLibrary::get(TemplateId id) const { return templates_.at(id); }

std::string TemplateLibrary::render(TemplateId id, const data::DescriptiveCaptionSet& captions) const {
  return prompt::render(get(id), captions);
}

std::string render(const PromptTemplate& tpl, const data::DescriptiveCaptionSet& captions) {
  if (captions.captions.empty()) throw Error(ErrorCode::empty_input, "no descriptive captions for " + captions.video_id);
  std::string joined;
  for (std::size_t i = 0; i < captions.captions.size(); ++i) {
    const auto& c = captions.captions[i];
    if (c.find('\n') != std::string::npos || c.find('\r') != std::string::npos)
      throw Error(ErrorCode::invariant_violation, captions.video_id + ": caption contains a line break");
    if (i) joined += '\n';
    joined += c;
  }
  const auto pos = tpl.body.find(kPlaceholder);
  std::string out = tpl.body;
  out.replace(pos, kPlaceholder.size(), joined);
  return out;
}

namespace {

bool is_blank(std::string_view s) { return s.find_first_not_of(" \t\r\n") == std::string_view::npos; }

// Removes one surrounding ``` fence (optionally tagged, e.g. ```json).
std::string strip_fence(const std::string& s) {
  if (s.rfind("```", 0) != 0) return s;
  const auto nl = s.find('\n');
  if (nl == std::string::npos) return s;
  const auto close = s.rfind("```");
  if (close == std::string::npos || close <= nl) return s;
  if (!is_blank(std::string_view(s).substr(close + 3))) return s;
  return text::trim(std::string_view(s).substr(nl + 1, close - nl - 1));
}

// End index (inclusive) of the brace-balanced span starting at open, honouring strings.
std::optional<std::size_t> balanced_end(const std::string& s, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (c == '\\') ++i;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{') ++depth;
    else if (c == '}' && --depth == 0) return i;
  }
  return std::nullopt;
}

bool holds_many(const nlohmann::json& j) {
  if (j.is_array()) return j.size() > 1;
  if (!j.is_object()) return false;
  std::size_t nested = 0;
  for (const auto& [_, v] : j.items()) {
    if (v.is_object()) ++nested;
    if (v.is_array() && v.size() > 1) return true;
  }
  return nested > 1;
}

ParsedResponse classify_object(ParsedResponse out, const nlohmann::json& obj, const std::string& video_id) {
  if (!obj.is_object()) {
    out.failure = holds_many(obj) ? ParseFailure::multiple_objects : ParseFailure::not_json;
    return out;
  }
  const bool exact_keys = obj.size() == 2 && obj.contains("Cause") && obj.contains("Effect") &&
                          obj["Cause"].is_string() && obj["Effect"].is_string();
  if (!exact_keys) {
    out.failure = holds_many(obj) ? ParseFailure::multiple_objects : ParseFailure::missing_keys;
    return out;
  }
  data::CtnCaption c{video_id, obj["Cause"].get<std::string>(), obj["Effect"].get<std::string>(), std::nullopt,
                     std::nullopt};
  const std::size_t nc = text::word_count(c.cause), ne = text::word_count(c.effect);
  if (nc == 0 || ne == 0) {
    out.failure = ParseFailure::empty_part;
  } else if (nc > data::kMaxPartWords || ne > data::kMaxPartWords) {
    out.failure = ParseFailure::word_limit;
  } else {
    out.ctn = std::move(c);
  }
  return out;
}

}  // namespace

ParsedResponse parse_response(std::string_view raw, const std::string& video_id) {
  ParsedResponse out;
  out.raw = std::string(raw);
  const std::string body = strip_fence(text::trim(raw));
  if (body.empty()) {
    out.failure = ParseFailure::not_json;
    return out;
  }
  const auto whole = nlohmann::json::parse(body, nullptr, false);
  if (!whole.is_discarded()) return classify_object(std::move(out), whole, video_id);

  // Not a single JSON document: look for embedded objects.
  std::vector<nlohmann::json> found;
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  for (std::size_t i = 0; i < body.size(); ++i) {
    if (body[i] != '{') continue;
    const auto end = balanced_end(body, i);
    if (!end) continue;
    auto j = nlohmann::json::parse(body.substr(i, *end - i + 1), nullptr, false);
    if (j.is_discarded()) continue;
    found.push_back(std::move(j));
    spans.emplace_back(i, *end);
    i = *end;
  }
  if (found.size() > 1) {
    out.failure = ParseFailure::multiple_objects;
  } else if (found.size() == 1) {
    out.failure = ParseFailure::extra_text;
  } else {
    out.failure = ParseFailure::not_json;
  }
  return out;
}

std::string serialize_ctn_json(const data::CtnCaption& c) {
  nlohmann::ordered_json j;
  j["Cause"] = c.cause;
  j["Effect"] = c.effect;
  return j.dump();
}

data::DescriptiveCaptionSet captions_from_frame_texts(const std::vector<std::string>& frame_captions,
                                                      const std::string& video_id) {
  if (frame_captions.empty()) throw Error(ErrorCode::empty_input, "no frame captions for " + video_id);
  data::DescriptiveCaptionSet set{video_id, frame_captions};
  set.validate();
  return set;
}

}  // namespace ctn::prompt
