#include <doctest.h>

#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ctn/prompt/prompt.hpp"
#include "ctn/util/jsonl.hpp"
#include "support.hpp"

using namespace ctn;
using namespace ctn::prompt;
using data::DescriptiveCaptionSet;
using testing::thrown_code;

namespace {

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

const TemplateLibrary& library() {
  static const TemplateLibrary lib(testing::data_dir().parent_path() / "templates");
  return lib;
}

}  // namespace

TEST_CASE("few-shot render matches the golden copy byte for byte") {
  const auto got = library().render(TemplateId::fewshot_v1, DescriptiveCaptionSet{"v", {"a car flipping over"}});
  CHECK(got == util::read_text(testing::data_dir() / "golden/fewshot_v1_single.txt"));
}

TEST_CASE("render rejects empty caption sets and unknown ids") {
  CHECK_THROWS(library().render(TemplateId::fewshot_v1, DescriptiveCaptionSet{"v", {}}));
  CHECK(thrown_code([] { parse_template_id("fewshot_v9"); }) == ErrorCode::unknown_template);
  for (auto id : kAllTemplates) CHECK(parse_template_id(to_string(id)) == id);
}

TEST_CASE("every template holds the placeholder once") {
  for (auto id : kAllTemplates) {
    const auto& body = library().get(id).body;
    const auto first = body.find(kPlaceholder);
    REQUIRE(first != std::string::npos);
    CHECK(body.find(kPlaceholder, first + 1) == std::string::npos);
  }
}

TEST_CASE("library refuses a template without the placeholder") {
  testing::TempDir dir;
  for (auto id : kAllTemplates) util::write_text(dir / (std::string(to_string(id)) + ".txt"), "x <descriptive_captions>\n");
  util::write_text(dir / "abl_no_plain.txt", "no placeholder\n");
  CHECK_THROWS(TemplateLibrary(dir.path()));
}

TEST_CASE("captions are joined one per line in order") {
  const PromptTemplate t{TemplateId::fewshot_v1, "A\n<descriptive_captions>\nB\n"};
  CHECK(render(t, DescriptiveCaptionSet{"v", {"one", "two", "three"}}) == "A\none\ntwo\nthree\nB\n");
}

TEST_CASE("ablation renders differ from the full prompt by one removed rule line") {
  const DescriptiveCaptionSet caps{"v", {"a man rides a bike", "the bike hits a rock", "he falls"}};
  const auto full = lines_of(library().render(TemplateId::fewshot_v1, caps));
  const std::vector<std::pair<TemplateId, std::string>> removed{
      {TemplateId::abl_no_grounding, "1. "},   {TemplateId::abl_no_relevance, "2. "},
      {TemplateId::abl_no_conclusions, "4. "}, {TemplateId::abl_no_temporal, "5. "},
      {TemplateId::abl_no_plain, "6. "},       {TemplateId::abl_no_limit, "7. "},
  };
  for (const auto& [id, prefix] : removed) {
    CAPTURE(to_string(id));
    const auto abl = lines_of(library().render(id, caps));
    REQUIRE(abl.size() + 1 == full.size());
    std::size_t skip = 0;
    while (skip < abl.size() && abl[skip] == full[skip]) ++skip;
    CHECK(full[skip].rfind(prefix, 0) == 0);
    for (std::size_t i = skip; i < abl.size(); ++i) CHECK(abl[i] == full[i + 1]);
  }
  const auto no_limit = library().render(TemplateId::abl_no_limit, caps);
  CHECK(no_limit.find("15 words") == std::string::npos);
}

TEST_CASE("render is injective in the caption list") {
  testing::Gen g(1);
  std::set<std::vector<std::string>> inputs;
  std::set<std::string> outputs;
  for (int i = 0; i < 300; ++i) {
    std::vector<std::string> caps;
    for (std::size_t k = 0, n = g.index(1, 4); k < n; ++k) caps.push_back(g.sentence(1, 4));
    if (!inputs.insert(caps).second) continue;
    const auto r = library().render(TemplateId::fewshot_v1, DescriptiveCaptionSet{"v", caps});
    CHECK(outputs.insert(r).second);
    CHECK(r == library().render(TemplateId::fewshot_v1, DescriptiveCaptionSet{"v", caps}));
  }
}

TEST_CASE("render refuses captions containing newlines") {
  CHECK(thrown_code([] {
          library().render(TemplateId::fewshot_v1, DescriptiveCaptionSet{"v", {"a\nb"}});
        }) == ErrorCode::invariant_violation);
}

TEST_CASE("well-formed responses parse") {
  const auto r = parse_response(
      R"({"Cause": "the student overslept due to a malfunctioning alarm clock", "Effect": "missed catching the bus to school"})",
      "vid");
  REQUIRE(r.ok());
  CHECK_FALSE(r.failure);
  CHECK(r.ctn->video_id == "vid");
  CHECK(r.ctn->cause == "the student overslept due to a malfunctioning alarm clock");
  CHECK(r.ctn->effect == "missed catching the bus to school");

  CHECK(parse_response("\n  {\"Cause\": \"a\", \"Effect\": \"b\"}  \n").ok());
  CHECK(parse_response("```json\n{\"Cause\": \"a\", \"Effect\": \"b\"}\n```").ok());
  CHECK(parse_response("```\n{\"Cause\": \"a\", \"Effect\": \"b\"}\n```\n").ok());
}

TEST_CASE("malformed responses map to specific failures") {
  auto fail = [](std::string_view raw) {
    const auto r = parse_response(raw);
    CHECK_FALSE(r.ok());
    REQUIRE(r.failure);
    return *r.failure;
  };
  const auto multi = util::read_text(testing::data_dir() / "fixtures/responses/multi_object.txt");
  CHECK(fail(multi) == ParseFailure::multiple_objects);
  CHECK(fail(R"([{"Cause": "a", "Effect": "b"}, {"Cause": "c", "Effect": "d"}])") == ParseFailure::multiple_objects);
  CHECK(fail(R"({"Cause": "a", "Effect": "b"} {"Cause": "c", "Effect": "d"})") == ParseFailure::multiple_objects);
  CHECK(fail("the cause is rain") == ParseFailure::not_json);
  CHECK(fail("") == ParseFailure::not_json);
  CHECK(fail(R"({"Cause": "a"})") == ParseFailure::missing_keys);
  CHECK(fail(R"({"Cause": "a", "Effect": "b", "Extra": "c"})") == ParseFailure::missing_keys);
  CHECK(fail(R"({"cause": "a", "effect": "b"})") == ParseFailure::missing_keys);
  CHECK(fail(R"(Sure! {"Cause": "a", "Effect": "b"})") == ParseFailure::extra_text);
  CHECK(fail(R"({"Cause": "a", "Effect": "b"} Hope this helps.)") == ParseFailure::extra_text);
  CHECK(fail(R"({"Cause": "one two three four five six seven eight nine ten eleven twelve thirteen fourteen fifteen sixteen", "Effect": "ok"})") ==
        ParseFailure::word_limit);
  CHECK(fail(R"({"Cause": "  ", "Effect": "ok"})") == ParseFailure::empty_part);
}

TEST_CASE("serialize then parse round trips valid captions") {
  testing::Gen g(2);
  const char* odd[] = {"\"quoted\"", "back\\slash", "caf\xc3\xa9", "tab\tbed", "50%"};
  for (int i = 0; i < 300; ++i) {
    data::CtnCaption c{"v", g.sentence(1, 13), g.sentence(1, 15), {}, {}};
    if (g.coin()) c.cause += std::string(" ") + odd[g.index(0, 4)];
    const auto r = parse_response(serialize_ctn_json(c), "v");
    REQUIRE(r.ok());
    CHECK(r.ctn->cause == c.cause);
    CHECK(r.ctn->effect == c.effect);
  }
}

TEST_CASE("parse never throws and sets exactly one outcome") {
  testing::Gen g(3);
  const std::string alphabet = "{}[]\":, abcCauseEffect\n`";
  for (int i = 0; i < 2000; ++i) {
    std::string s;
    for (std::size_t k = 0, n = g.index(0, 40); k < n; ++k) s += alphabet[g.index(0, alphabet.size() - 1)];
    ParsedResponse r;
    CHECK_NOTHROW(r = parse_response(s));
    CHECK(r.ctn.has_value() != r.failure.has_value());
    CHECK(r.raw == s);
  }
}

TEST_CASE("frame captions become a caption set") {
  const std::vector<std::string> frames{"a tractor is driving", "there are four trucks", "a tractor is upside down",
                                        "a game is being played", "two people are celebrating"};
  const auto set = captions_from_frame_texts(frames, "clip");
  CHECK(set.captions == frames);
  CHECK(set.video_id == "clip");
  const auto rendered = library().render(TemplateId::fewshot_v1, set);
  for (const auto& f : frames) CHECK(rendered.find("\n" + f + "\n") != std::string::npos);
  CHECK(captions_from_frame_texts({"x"}).captions.size() == 1);
  CHECK(thrown_code([] { captions_from_frame_texts({}); }) == ErrorCode::empty_input);
}
