#include <doctest.h>

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "ctn/data/dataset.hpp"
#include "ctn/data/video.hpp"
#include "ctn/text/tokenizer.hpp"
#include "ctn/util/jsonl.hpp"
#include "support.hpp"

using namespace ctn;
using namespace ctn::data;
using testing::thrown_code;

namespace {

void write_manifest(const std::filesystem::path& p, const std::vector<std::pair<Split, std::size_t>>& counts,
                    DatasetTag tag) {
  std::ofstream out(p);
  std::size_t id = 0;
  for (auto [split, n] : counts)
    for (std::size_t i = 0; i < n; ++i) {
      nlohmann::json j{{"video_id", "vid" + std::to_string(id++)},
                       {"media_path", "media/x.mp4"},
                       {"duration_s", 10.0},
                       {"dataset_tag", std::string(to_string(tag))},
                       {"split", std::string(to_string(split))}};
      out << j.dump() << "\n";
    }
}

VideoRecord synth(double duration, double fps = 1.0) {
  VideoRecord v;
  v.video_id = "s";
  v.media_path = "synth:seed=4;fps=" + std::to_string(fps) + ";size=8";
  v.duration_s = duration;
  return v;
}

}  // namespace

TEST_CASE("split counts of full-size manifests") {
  testing::TempDir dir;
  write_manifest(dir / "msvd.jsonl", {{Split::train, 1200}, {Split::val, 100}, {Split::test, 670}}, DatasetTag::msvd);
  CHECK(load_manifest(dir / "msvd.jsonl").split_counts() == SplitCounts{1200, 100, 670});
  write_manifest(dir / "msrvtt.jsonl", {{Split::train, 6513}, {Split::val, 497}, {Split::test, 2990}},
                 DatasetTag::msrvtt);
  const auto m = load_manifest(dir / "msrvtt.jsonl");
  CHECK(m.split_counts() == SplitCounts{6513, 497, 2990});
  const auto c = m.split_counts();
  CHECK(c.train + c.val + c.test == m.records.size());
}

TEST_CASE("manifest parse errors") {
  testing::TempDir dir;
  util::write_text(dir / "empty.jsonl", "");
  CHECK(thrown_code([&] { load_manifest(dir / "empty.jsonl"); }) == ErrorCode::parse_error);

  util::write_text(dir / "bad.jsonl",
                   "{\"video_id\":\"a\",\"media_path\":\"m\",\"duration_s\":1,\"dataset_tag\":\"custom\",\"split\":\"train\"}\n{oops\n");
  try {
    load_manifest(dir / "bad.jsonl");
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::parse_error);
    CHECK(std::string(e.what()).find("bad.jsonl:2:") != std::string::npos);
  }

  util::write_text(dir / "dup.jsonl",
                   "{\"video_id\":\"a\",\"media_path\":\"m\",\"duration_s\":1,\"dataset_tag\":\"custom\",\"split\":\"train\"}\n"
                   "{\"video_id\":\"a\",\"media_path\":\"m\",\"duration_s\":1,\"dataset_tag\":\"custom\",\"split\":\"test\"}\n");
  CHECK(thrown_code([&] { load_manifest(dir / "dup.jsonl"); }) == ErrorCode::invariant_violation);

  util::write_text(dir / "neg.jsonl",
                   "{\"video_id\":\"zz9\",\"media_path\":\"m\",\"duration_s\":0,\"dataset_tag\":\"custom\",\"split\":\"train\"}\n");
  try {
    load_manifest(dir / "neg.jsonl");
    FAIL("expected invariant violation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::invariant_violation);
    CHECK(std::string(e.what()).find("zz9") != std::string::npos);
  }
}

TEST_CASE("ctn entries must refer to known videos") {
  testing::TempDir dir;
  write_manifest(dir / "manifest.jsonl", {{Split::train, 2}}, DatasetTag::custom);
  util::write_json(dir / "ctn.json", {{"ghost", {{"Cause", "a"}, {"Effect", "b"}}}});
  CHECK(thrown_code([&] { load_manifest(dir / "manifest.jsonl"); }) == ErrorCode::invariant_violation);
}

TEST_CASE("fixture manifest loads sidecars") {
  const auto m = load_manifest(testing::data_dir() / "fixtures/stub3/manifest.jsonl");
  CHECK(m.records.size() == 3);
  CHECK(m.caption_index.at("v003").captions.size() == 2);
  CHECK(m.ctn_index.empty());
  CHECK(m.in_split(Split::test).size() == 1);
  CHECK(m.find("v002").media_path.rfind("synth:", 0) == 0);
  CHECK_THROWS(m.find("nope"));
}

TEST_CASE("combine caption") {
  CtnCaption c{"x", "a tractor driving recklessly flips over and ends up upside down",
               "causing an accident, while others celebrated unaware", {}, {}};
  CHECK(combine_caption(c) ==
        "a tractor driving recklessly flips over and ends up upside down causing an accident, while others "
        "celebrated unaware");
  CHECK(combine_caption(CtnCaption{"x", "a b", "c", {}, {}}) == "a b c");
  CHECK(thrown_code([] { combine_caption(CtnCaption{"x", "", "c", {}, {}}); }) == ErrorCode::invariant_violation);
}

TEST_CASE("caption part word limits") {
  std::string sixteen;
  for (int i = 0; i < 16; ++i) sixteen += "w ";
  CHECK(thrown_code([&] { CtnCaption{"v", sixteen, "e", {}, {}}.validate(); }) == ErrorCode::invariant_violation);
  std::string fifteen;
  for (int i = 0; i < 15; ++i) fifteen += "w ";
  CHECK_NOTHROW(CtnCaption{"v", fifteen, "e", {}, {}}.validate());
}

TEST_CASE("combined word count is the sum of the parts") {
  testing::Gen g(3);
  for (int i = 0; i < 200; ++i) {
    CtnCaption c{"v", g.sentence(1, 15), g.sentence(1, 15), {}, {}};
    CHECK(text::word_count(combine_caption(c)) == text::word_count(c.cause) + text::word_count(c.effect));
  }
}

TEST_CASE("manifest save and load is byte stable") {
  testing::TempDir dir;
  testing::Gen g(4);
  DatasetManifest m;
  for (int i = 0; i < 12; ++i) {
    VideoRecord r{"v" + std::to_string(i), "media/" + std::to_string(i) + ".mp4", g.uniform(0.5, 60.0),
                  static_cast<DatasetTag>(g.index(0, 2)), static_cast<Split>(g.index(0, 2))};
    m.records.push_back(r);
    m.caption_index[r.video_id] = DescriptiveCaptionSet{r.video_id, {g.sentence(1, 8), g.sentence(1, 8)}};
    if (g.coin()) {
      CtnCaption c{r.video_id, g.sentence(1, 15), g.sentence(1, 15), {}, {}};
      if (g.coin()) c.emscore = g.uniform(0, 1);
      if (g.coin()) c.attempts = static_cast<int>(g.index(1, 5));
      m.ctn_index[r.video_id] = c;
    }
  }
  save_manifest(m, dir / "a/manifest.jsonl");
  const auto loaded = load_manifest(dir / "a/manifest.jsonl");
  save_manifest(loaded, dir / "b/manifest.jsonl");
  for (const char* f : {"manifest.jsonl", "captions.json", "ctn.json"})
    CHECK(util::read_text(dir / "a" / f) == util::read_text(dir / "b" / f));
  CHECK(loaded.ctn_index.size() == m.ctn_index.size());
  CHECK(loaded.split_counts() == m.split_counts());
}

TEST_CASE("ctn file uses Cause and Effect keys") {
  testing::TempDir dir;
  std::map<std::string, CtnCaption> idx{{"a", CtnCaption{"a", "x y", "z", 0.25, 2}}};
  save_ctn_file(idx, dir / "ctn.json");
  const auto j = util::read_json(dir / "ctn.json");
  CHECK(j["a"]["Cause"] == "x y");
  CHECK(j["a"]["Effect"] == "z");
  CHECK(j["a"]["attempts"] == 2);
  const auto back = load_ctn_file(dir / "ctn.json");
  CHECK(back.at("a").emscore.value() == doctest::Approx(0.25));
}

TEST_CASE("equally spaced sampling uses interval midpoints") {
  SyntheticDecoder dec;
  auto f = sample_equally_spaced(synth(10.0, 10.0), 5, dec);
  REQUIRE(f.timestamps_s.size() == 5);
  const std::vector<double> want{1, 3, 5, 7, 9};
  for (std::size_t i = 0; i < 5; ++i) CHECK(f.timestamps_s[i] == doctest::Approx(want[i]));
  CHECK(f.frames.size() == 5);
  CHECK_FALSE(f.short_clip);

  auto one = sample_equally_spaced(synth(10.0, 10.0), 1, dec);
  REQUIRE(one.timestamps_s.size() == 1);
  CHECK(one.timestamps_s[0] == doctest::Approx(5.0));
}

TEST_CASE("short clips return every decodable frame") {
  SyntheticDecoder dec;
  const auto v = synth(2.0, 1.0);
  const auto info = dec.probe(v);
  auto f = sample_equally_spaced(v, 5, dec);
  CHECK(f.frames.size() == info.frame_count);
  CHECK(f.frames.size() == 2);
  CHECK(f.short_clip);
}

TEST_CASE("equally spaced timestamps are increasing and in range") {
  SyntheticDecoder dec;
  testing::Gen g(5);
  for (int i = 0; i < 50; ++i) {
    const double d = g.uniform(1.0, 30.0);
    const auto k = g.index(1, 8);
    auto f = sample_equally_spaced(synth(d, 5.0), k, dec);
    for (std::size_t j = 0; j < f.timestamps_s.size(); ++j) {
      CHECK(f.timestamps_s[j] >= 0.0);
      CHECK(f.timestamps_s[j] <= d);
      if (j) CHECK(f.timestamps_s[j] > f.timestamps_s[j - 1]);
    }
  }
}

TEST_CASE("one frame per second schedule") {
  SyntheticDecoder dec;
  auto f7 = sample_frames(synth(7.0, 2.0), dec);
  REQUIRE(f7.timestamps_s.size() == 7);
  for (std::size_t i = 0; i < 7; ++i) CHECK(f7.timestamps_s[i] == doctest::Approx(double(i)));

  auto f40 = sample_frames(synth(40.0, 1.0), dec);
  REQUIRE(f40.frames.size() == kMaxFrames);
  CHECK(f40.timestamps_s.front() == doctest::Approx(0.0));
  CHECK(f40.timestamps_s.back() < 40.0);
  CHECK(f40.timestamps_s.back() >= 36.0);

  CHECK(sample_frames(synth(0.5, 4.0), dec).frames.size() == 1);
  CHECK(frame_schedule(20.0).size() == 20);
  CHECK(frame_schedule(21.0).size() == 20);
}

TEST_CASE("synthetic frames are deterministic and resizable") {
  SyntheticDecoder dec;
  auto a = sample_frames(synth(3.0), dec);
  auto b = sample_frames(synth(3.0), dec);
  CHECK(a.frames[1].rgb == b.frames[1].rgb);
  auto r = resize_frames(a, 5);
  CHECK(r.frames[0].width == 5);
  CHECK(r.frames[0].rgb.size() == 75);
}

TEST_CASE("opencv decoder reads a written container") {
  testing::TempDir dir;
  SyntheticDecoder dec;
  auto src = sample_frames(synth(4.0), dec);
  const auto path = (dir / "clip.avi").string();
  write_video(path, src.frames, 1.0);
  VideoRecord v{"c", path, 4.0, DatasetTag::custom, Split::test};
  OpenCvDecoder cv;
  const auto info = cv.probe(v);
  CHECK(info.frame_count == 4);
  auto f = sample_frames(v, AutoDecoder{});
  CHECK(f.frames.size() == 4);
  CHECK(f.frames[0].width == src.frames[0].width);
  VideoRecord missing{"m", (dir / "nope.avi").string(), 4.0, DatasetTag::custom, Split::test};
  CHECK(thrown_code([&] { cv.probe(missing); }) == ErrorCode::decode_failure);
}
