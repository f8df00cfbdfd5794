#include <doctest.h>

#include <filesystem>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "ctn/cli/cli.hpp"
#include "ctn/data/dataset.hpp"
#include "ctn/util/jsonl.hpp"
#include "support.hpp"

using namespace ctn;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result ctn_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string templates() { return (testing::data_dir().parent_path() / "templates").string(); }

fs::path stub3(const testing::TempDir& dir) {
  const auto src = testing::data_dir() / "fixtures" / "stub3";
  const auto dst = dir / "stub3";
  fs::create_directories(dst);
  for (const auto* f : {"manifest.jsonl", "captions.json", "config.json"}) fs::copy_file(src / f, dst / f);
  return dst;
}

std::size_t line_count(const fs::path& p) {
  std::size_t n = 0;
  for (char c : util::read_text(p)) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("gen on the stub fixture writes captions and an audit trail, then resumes") {
  testing::TempDir dir;
  const auto data = stub3(dir);
  const auto out = (dir / "run").string();
  const std::vector<std::string> args{"gen", "--config", (data / "config.json").string(), "--set",
                                      "manifest=" + (data / "manifest.jsonl").string(), "--set",
                                      "templates.dir=" + templates(), "--out", out};
  const auto r = ctn_cli(args);
  INFO(r.err);
  CHECK(r.code == cli::kOk);
  const auto ctn = data::load_ctn_file(fs::path(out) / "ctn.json");
  CHECK(ctn.size() == 3);
  CHECK(ctn.at("v002").effect == "the glass breaks and people run");
  CHECK(line_count(fs::path(out) / "audit.jsonl") == 3);
  CHECK(fs::exists(fs::path(out) / "resolved_gen.json"));

  const auto again = ctn_cli(args);
  CHECK(again.code == cli::kOk);
  CHECK(again.out.find("processed 0 videos") != std::string::npos);
  CHECK(line_count(fs::path(out) / "audit.jsonl") == 3);

  const auto stats = ctn_cli({"filter-stats", "--out", out});
  CHECK(stats.code == cli::kOk);
  const auto s = util::read_json(fs::path(out) / "filter_stats.json");
  CHECK(s["accepted"] == 3);
  CHECK(s["fraction_above"].get<double>() == 1.0);
}

TEST_CASE("exit codes") {
  testing::TempDir dir;
  const auto data = stub3(dir);
  const auto manifest = "manifest=" + (data / "manifest.jsonl").string();
  CHECK(ctn_cli({"nonsense"}).code == cli::kConfigError);
  CHECK(ctn_cli({"gen", "--set", "no.such.key=1", "--out", (dir / "a").string()}).code == cli::kConfigError);
  CHECK(ctn_cli({"gen", "--set", "seed=\"x\"", "--out", (dir / "a").string()}).code == cli::kConfigError);
  CHECK(ctn_cli({"ablate", "--id", "bogus", "--set", manifest, "--out", (dir / "b").string()}).code ==
        cli::kConfigError);

  const auto missing = ctn_cli({"eval", "--set", manifest, "--out", (dir / "c").string()});
  CHECK(missing.code == cli::kRuntimeFailure);
  CHECK(missing.err.find("predictions") != std::string::npos);

  const auto exhausted = ctn_cli({"gen", "--config", (data / "config.json").string(), "--set", manifest, "--set",
                                  "templates.dir=" + templates(), "--set", "filter.scores=[0.1]", "--max-attempts",
                                  "3", "--out", (dir / "d").string()});
  CHECK(exhausted.code == cli::kPartial);
  CHECK(data::load_ctn_file(dir / "d" / "ctn.json").empty());
  const auto audit = util::read_jsonl(dir / "d" / "audit.jsonl");
  CHECK(audit.size() == 3);
  for (const auto& a : audit) CHECK(a["attempts"].size() == 3);
}

TEST_CASE("label routes frame captions into the generation prompt") {
  testing::TempDir dir;
  const auto data = dir / "unlabelled";
  fs::create_directories(data);
  util::write_text(data / "manifest.jsonl",
                   R"({"video_id":"u1","media_path":"synth:seed=5;fps=1;size=16;cause=0;effect=1","duration_s":10,)"
                   R"("dataset_tag":"custom","split":"test"})"
                   "\n");
  const std::vector<std::string> frames{"a tractor is driving", "there are four trucks", "a tractor is upside down",
                                        "a game is being played", "two people are celebrating"};

  httplib::Server llm;
  std::vector<std::string> prompts;
  std::mutex mu;
  llm.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    {
      std::lock_guard lock(mu);
      prompts.push_back(body["messages"][0]["content"].get<std::string>());
    }
    const nlohmann::json reply{{"Cause", "a tractor drives and flips over"}, {"Effect", "people celebrate the game"}};
    res.set_content(nlohmann::json{{"choices", {{{"message", {{"content", reply.dump()}}}}}}}.dump(),
                    "application/json");
  });
  const int port = llm.bind_to_any_port("127.0.0.1");
  std::thread server([&] { llm.listen_after_bind(); });
  llm.wait_until_ready();

  const auto out = dir / "labelled";
  const auto r = ctn_cli({"label", "--set", "manifest=" + (data / "manifest.jsonl").string(), "--set",
                          "templates.dir=" + templates(), "--set", "llm.backend=http", "--set",
                          "llm.base_url=http://127.0.0.1:" + std::to_string(port), "--set", "filter.scorer=scripted",
                          "--set", "filter.scores=[0.5]", "--set",
                          "captioner.captions=" + nlohmann::json(frames).dump(), "--out", out.string()});
  llm.stop();
  server.join();
  INFO(r.err);
  CHECK(r.code == cli::kOk);
  const auto labels = util::read_jsonl(out / "frame_captions.jsonl");
  REQUIRE(labels.size() == 1);
  CHECK(labels[0]["captions"].get<std::vector<std::string>>() == frames);
  CHECK(labels[0]["short_clip"] == false);
  REQUIRE(prompts.size() == 1);
  for (const auto& f : frames) CHECK(prompts[0].find("\n" + f + "\n") != std::string::npos);
  CHECK(data::load_ctn_file(out / "ctn.json").at("u1").cause == "a tractor drives and flips over");
}

TEST_CASE("ablate then eval produces a metric report") {
  testing::TempDir dir;
  const auto data = dir / "toy";
  fs::create_directories(data);
  std::string manifest;
  std::map<std::string, data::CtnCaption> ctn;
  const char* splits[] = {"train", "train", "train", "test", "test"};
  const char* causes[] = {"a boy kicks a ball", "a pot boils over", "a dog pulls a leash", "a boy kicks a ball",
                          "a pot boils over"};
  const char* effects[] = {"the window breaks", "smoke fills the room", "the man falls", "the window breaks",
                           "smoke fills the room"};
  for (int i = 0; i < 5; ++i) {
    const std::string id = "t" + std::to_string(i);
    manifest += nlohmann::json{{"video_id", id},
                               {"media_path", "synth:seed=" + std::to_string(i) + ";fps=1;size=16;cause=" +
                                                  std::to_string(i % 3) + ";effect=" + std::to_string(i % 3)},
                               {"duration_s", 4},
                               {"dataset_tag", "custom"},
                               {"split", splits[i]}}
                    .dump() +
                "\n";
    ctn[id] = data::CtnCaption{id, causes[i], effects[i], {}, {}};
  }
  util::write_text(data / "manifest.jsonl", manifest);
  data::save_ctn_file(ctn, data / "ctn.json");

  const auto out = dir / "only_cause";
  const auto ab = ctn_cli({"ablate", "--id", "only_cause", "--set", "manifest=" + (data / "manifest.jsonl").string(),
                           "--set", "train.stage1.epochs=1", "--set", "train.stage2.epochs=3", "--out", out.string()});
  INFO(ab.err);
  REQUIRE(ab.code == cli::kOk);
  const auto summary = util::read_json(out / "ablation.json");
  CHECK(summary["variant"] == "only_cause");
  CHECK(summary["wiring"] == "cause_only");
  CHECK(summary["test_videos"] == 2);
  CHECK(summary["updates"].get<int>() > 0);
  CHECK(line_count(out / "predictions.jsonl") == 2);
  CHECK(fs::exists(out / "checkpoints" / "stage1_cause.ckpt"));

  const auto again = ctn_cli({"ablate", "--id", "only_cause", "--set", "manifest=" + (data / "manifest.jsonl").string(),
                              "--out", out.string()});
  CHECK(again.out.find("already complete") != std::string::npos);

  const auto ev = ctn_cli({"eval", "--set", "manifest=" + (data / "manifest.jsonl").string(), "--out", out.string()});
  INFO(ev.err);
  REQUIRE(ev.code == cli::kOk);
  const auto csv = util::read_text(out / "report.csv");
  CHECK(csv.rfind("video_id,ROUGE_L,CIDEr", 0) == 0);
  CHECK(line_count(out / "report.csv") == 3);
  const auto es = util::read_json(out / "eval_summary.json");
  CHECK(es["count"] == 2);
  CHECK(es["SPICE"] == "not_run");

  const auto judge = ctn_cli({"judge", "--set", "manifest=" + (data / "manifest.jsonl").string(), "--set",
                              "templates.dir=" + templates(), "--set", "llm.responses=[\"Score: 1\"]", "--out",
                              out.string()});
  INFO(judge.err);
  CHECK(judge.code == cli::kOk);
  CHECK(util::read_json(out / "judge_summary.json")["formatted"] == "100.0 / 100.0");
}
