#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ctn/data/dataset.hpp"

namespace ctn::prompt {

enum class TemplateId {
  fewshot_v1,
  zeroshot_minimal,
  zeroshot_concise,
  zeroshot_clear,
  zeroshot_norules,
  abl_no_grounding,
  abl_no_temporal,
  abl_no_limit,
  abl_no_plain,
  abl_no_conclusions,
  abl_no_relevance,
};

inline constexpr std::array kAllTemplates = {
    TemplateId::fewshot_v1,       TemplateId::zeroshot_minimal, TemplateId::zeroshot_concise,
    TemplateId::zeroshot_clear,   TemplateId::zeroshot_norules, TemplateId::abl_no_grounding,
    TemplateId::abl_no_temporal,  TemplateId::abl_no_limit,     TemplateId::abl_no_plain,
    TemplateId::abl_no_conclusions, TemplateId::abl_no_relevance,
};

inline constexpr std::string_view kPlaceholder = "<descriptive_captions>";

std::string_view to_string(TemplateId id);
/// Throws unknown_template.
TemplateId parse_template_id(std::string_view name);

struct PromptTemplate {
  TemplateId id;
  std::string body;
};

/// Directory from CTN_TEMPLATE_DIR, else the source tree's templates/.
std::filesystem::path default_template_dir();

/// Loads every template_id's .txt from a directory and checks the placeholder.
class TemplateLibrary {
 public:
  explicit TemplateLibrary(const std::filesystem::path& dir = default_template_dir());

  const PromptTemplate& get(TemplateId id) const;
  std::string render(TemplateId id, const data::DescriptiveCaptionSet& captions) const;
  const std::filesystem::path& directory() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::map<TemplateId, PromptTemplate> templates_;
};

/// Replaces the placeholder with the captions, one per line, in order.
std::string render(const PromptTemplate& tpl, const data::DescriptiveCaptionSet& captions);

enum class ParseFailure { not_json, multiple_objects, missing_keys, extra_text, word_limit, empty_part };

std::string_view to_string(ParseFailure f);

struct ParsedResponse {
  std::string raw;
  std::optional<data::CtnCaption> ctn;
  std::optional<ParseFailure> failure;

  bool ok() const { return ctn.has_value(); }
};

/// Accepts exactly one JSON object with exactly the keys "Cause" and "Effect"
/// (surrounding whitespace and a Markdown code fence are tolerated). Every
/// other shape maps to a ParseFailure; never throws.
ParsedResponse parse_response(std::string_view raw, const std::string& video_id = "");

/// The JSON shape the prompt asks the model to produce.
std::string serialize_ctn_json(const data::CtnCaption& c);

/// Wraps per-frame image captions for rendering. Throws empty_input on [].
data::DescriptiveCaptionSet captions_from_frame_texts(const std::vector<std::string>& frame_captions,
                                                      const std::string& video_id = "");

}  // namespace ctn::prompt
