#include "ctn/cli/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <thread>

#include "ctn/data/dataset.hpp"
#include "ctn/data/video.hpp"
#include "ctn/error.hpp"
#include "ctn/filter/relevance.hpp"
#include "ctn/humaneval/service.hpp"
#include "ctn/llm/captioner.hpp"
#include "ctn/llm/gateway.hpp"
#include "ctn/metrics/judge.hpp"
#include "ctn/metrics/metrics.hpp"
#include "ctn/metrics/spice.hpp"
#include "ctn/prompt/prompt.hpp"
#include "ctn/train/ablation.hpp"
#include "ctn/train/trainer.hpp"
#include "ctn/util/jsonl.hpp"

namespace ctn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

json default_config() {
  auto train_section = [](train::Stage s) {
    json j = train::TrainConfig::defaults(s).to_json();
    j.erase("stage");
    j.erase("seed");
    j.erase("optimizer");
    return j;
  };
  return {
      {"seed", 0},
      {"workers", 1},
      {"out", "run"},
      {"manifest", ""},
      {"templates", {{"dir", ""}, {"id", "fewshot_v1"}}},
      {"llm",
       {{"backend", "stub"},
        {"responses", json::array()},
        {"base_url", ""},
        {"path", "/v1/chat/completions"},
        {"model", ""},
        {"api_key_env", "CTN_LLM_API_KEY"},
        {"timeout_s", 120},
        {"max_tokens", 256},
        {"temperature", llm::kGenerationTemperature},
        {"max_in_flight", 4},
        {"retry_attempts", 4},
        {"initial_backoff_ms", 250}}},
      {"filter",
       {{"theta", filter::kDefaultTheta},
        {"max_attempts", filter::kDefaultMaxAttempts},
        {"scorer", "emscore"},
        {"scores", json::array()},
        {"encoder_checkpoint", ""},
        {"bin_width", 0.1}}},
      {"captioner",
       {{"backend", "stub"},
        {"captions", json::array()},
        {"base_url", ""},
        {"path", "/caption"},
        {"api_key_env", "CTN_CAPTIONER_API_KEY"},
        {"timeout_s", 60},
        {"frames", 5}}},
      {"encoder", model::EncoderConfig{}.to_json()},
      {"stage2", model::Stage2Config{}.to_json()},
      {"train", {{"stage1", train_section(train::Stage::stage1)}, {"stage2", train_section(train::Stage::stage2)}}},
      {"stage1_run", ""},
      {"decode", {{"strategy", "greedy"}, {"beam_width", 3}}},
      {"ablation", {{"id", "full_cen"}, {"source_run", ""}}},
      {"eval", {{"predictions", ""}, {"spice_tool", ""}, {"cider_d", false}}},
      {"serve", {{"host", "127.0.0.1"}, {"port", 8080}, {"batch", ""}}},
      {"export", {{"split", "test"}}},
  };
}

void merge_config(json& dst, const json& src, const std::string& where) {
  if (!src.is_object()) throw Error(ErrorCode::config_error, (where.empty() ? "config" : where) + " must be an object");
  for (const auto& [key, value] : src.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!dst.contains(key)) throw Error(ErrorCode::config_error, "unknown config key '" + path + "'");
    json& slot = dst[key];
    if (slot.is_object()) {
      merge_config(slot, value, path);
      continue;
    }
    const bool same = (slot.is_number() && value.is_number()) || (slot.is_string() && value.is_string()) ||
                      (slot.is_boolean() && value.is_boolean()) || (slot.is_array() && value.is_array());
    if (!same) throw Error(ErrorCode::config_error, "config key '" + path + "' has the wrong type");
    if (slot.is_number_integer() && !value.is_number_integer())
      throw Error(ErrorCode::config_error, "config key '" + path + "' must be an integer");
    slot = value;
  }
}

void apply_override(json& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw Error(ErrorCode::config_error, "override must look like key=value: '" + std::string(assignment) + "'");
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1))
    parts.push_back(rest.substr(0, pos));
  parts.push_back(rest);
  // A string slot takes the raw text even when it happens to parse as JSON.
  const json* slot = &cfg;
  for (const auto& p : parts) {
    if (!slot->is_object() || !slot->contains(p)) throw Error(ErrorCode::config_error, "unknown config key '" + key + "'");
    slot = &(*slot)[p];
  }
  if (slot->is_string() && !patch.is_string()) patch = raw;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  merge_config(cfg, patch);
}

namespace {

struct Context {
  std::string command;
  json cfg;
  fs::path out;
  std::ostream& log;
  std::ostream& err;
};

template <typename T>
T get(const json& cfg, const json::json_pointer& ptr) {
  return cfg.at(ptr).get<T>();
}

std::string str(const json& cfg, const char* ptr) { return get<std::string>(cfg, json::json_pointer(ptr)); }

data::DatasetManifest load_dataset(const json& cfg) {
  const auto path = str(cfg, "/manifest");
  if (path.empty()) throw Error(ErrorCode::config_error, "manifest is required");
  return data::load_manifest(path);
}

fs::path template_dir(const json& cfg) {
  const auto dir = str(cfg, "/templates/dir");
  return dir.empty() ? prompt::default_template_dir() : fs::path(dir);
}

std::unique_ptr<llm::Gateway> make_gateway(const json& cfg) {
  const json& l = cfg.at("llm");
  llm::RetryPolicy policy;
  policy.max_attempts = l.at("retry_attempts").get<int>();
  policy.initial_backoff = std::chrono::milliseconds(l.at("initial_backoff_ms").get<int>());
  auto gw = std::make_unique<llm::Gateway>(policy, l.at("max_in_flight").get<std::size_t>());
  const auto backend = l.at("backend").get<std::string>();
  if (backend == "stub") {
    auto script = l.at("responses").get<std::vector<std::string>>();
    if (script.empty()) throw Error(ErrorCode::config_error, "llm.responses must be non-empty for the stub backend");
    gw->register_backend(std::make_shared<llm::StubBackend>("stub", std::move(script)));
  } else if (backend == "http") {
    llm::HttpBackendConfig h;
    h.base_url = l.at("base_url").get<std::string>();
    h.path = l.at("path").get<std::string>();
    h.model = l.at("model").get<std::string>();
    h.api_key_env = l.at("api_key_env").get<std::string>();
    h.timeout_s = l.at("timeout_s").get<int>();
    if (h.base_url.empty()) throw Error(ErrorCode::config_error, "llm.base_url is required for the http backend");
    gw->register_backend(std::make_shared<llm::HttpChatBackend>(h));
  } else {
    throw Error(ErrorCode::config_error, "llm.backend must be 'stub' or 'http'");
  }
  return gw;
}

std::unique_ptr<llm::ImageCaptioner> make_captioner(const json& cfg) {
  const json& c = cfg.at("captioner");
  const auto backend = c.at("backend").get<std::string>();
  if (backend == "stub") {
    auto script = c.at("captions").get<std::vector<std::string>>();
    if (script.empty()) throw Error(ErrorCode::config_error, "captioner.captions must be non-empty for the stub backend");
    return std::make_unique<llm::StubImageCaptioner>(std::move(script));
  }
  if (backend == "http") {
    llm::HttpCaptionerConfig h;
    h.base_url = c.at("base_url").get<std::string>();
    h.path = c.at("path").get<std::string>();
    h.api_key_env = c.at("api_key_env").get<std::string>();
    h.timeout_s = c.at("timeout_s").get<int>();
    if (h.base_url.empty()) throw Error(ErrorCode::config_error, "captioner.base_url is required for the http backend");
    return std::make_unique<llm::HttpImageCaptioner>(h);
  }
  throw Error(ErrorCode::config_error, "captioner.backend must be 'stub' or 'http'");
}

std::unique_ptr<filter::CaptionScorer> make_scorer(const json& cfg, const data::DatasetManifest& m,
                                                   std::shared_ptr<const data::VideoDecoder> decoder) {
  const json& f = cfg.at("filter");
  const auto kind = f.at("scorer").get<std::string>();
  if (kind == "scripted") {
    auto scores = f.at("scores").get<std::vector<double>>();
    if (scores.empty()) throw Error(ErrorCode::config_error, "filter.scores must be non-empty for the scripted scorer");
    return std::make_unique<filter::ScriptedScorer>(std::move(scores));
  }
  if (kind != "emscore") throw Error(ErrorCode::config_error, "filter.scorer must be 'emscore' or 'scripted'");
  std::shared_ptr<const model::RoleEncoderPair> enc;
  const auto ckpt = f.at("encoder_checkpoint").get<std::string>();
  if (!ckpt.empty()) {
    enc = std::make_shared<model::RoleEncoderPair>(model::RoleEncoderPair::load(ckpt));
  } else {
    std::vector<std::string> texts;
    for (const auto& [_, caps] : m.caption_index)
      for (const auto& c : caps.captions) texts.push_back(c);
    enc = std::make_shared<model::RoleEncoderPair>(model::Role::combined, model::EncoderConfig::from_json(cfg.at("encoder")),
                                                   text::Vocabulary::build(texts), cfg.at("seed").get<std::uint64_t>());
  }
  const int size = enc->config().image_size;
  return std::make_unique<filter::EmScoreScorer>(std::make_shared<filter::EncoderVisionTextBackend>(enc), decoder,
                                                 size);
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads; the first exception is
/// rethrown after every worker stops.
template <typename Fn>
void fan_out(std::size_t n, std::size_t workers, Fn&& fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex mu;
  auto body = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first) first = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < std::min(std::max<std::size_t>(workers, 1), n); ++w) pool.emplace_back(body);
  body();
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

struct PendingVideo {
  data::VideoRecord record;
  std::optional<data::DescriptiveCaptionSet> captions;
};

/// Shared by gen and label: filter_loop per video, ctn.json rewritten after each
/// acceptance and one audit line per finished video.
int run_filter(Context& ctx, const data::DatasetManifest& m, std::vector<PendingVideo> pending,
               const std::function<data::DescriptiveCaptionSet(const data::VideoRecord&)>& describe) {
  const json& cfg = ctx.cfg;
  const auto ctn_path = ctx.out / "ctn.json";
  std::map<std::string, data::CtnCaption> accepted;
  if (fs::exists(ctn_path)) accepted = data::load_ctn_file(ctn_path);
  std::erase_if(pending, [&](const PendingVideo& p) { return accepted.count(p.record.video_id) > 0; });

  const prompt::TemplateLibrary templates(template_dir(cfg));
  const auto template_id = prompt::parse_template_id(str(cfg, "/templates/id"));
  auto gateway = make_gateway(cfg);
  auto decoder = std::make_shared<data::AutoDecoder>();
  auto scorer = make_scorer(cfg, m, decoder);
  const double theta = cfg.at("filter").at("theta").get<double>();
  const int max_attempts = cfg.at("filter").at("max_attempts").get<int>();
  if (!(theta > -1.0 && theta < 1.0)) throw Error(ErrorCode::config_error, "filter.theta must be in (-1, 1)");
  if (max_attempts < 1) throw Error(ErrorCode::config_error, "filter.max_attempts must be >= 1");
  const auto seed = cfg.at("seed").get<std::uint64_t>();

  util::JsonlWriter audit(ctx.out / "audit.jsonl");
  std::mutex mu;
  std::size_t exhausted = 0, failed = 0;
  fan_out(pending.size(), cfg.at("workers").get<std::size_t>(), [&](std::size_t i) {
    const auto& video = pending[i].record;
    try {
      const auto caps = pending[i].captions ? *pending[i].captions : describe(video);
      filter::FilterDeps deps;
      deps.templates = &templates;
      deps.template_id = template_id;
      deps.gateway = gateway.get();
      deps.scorer = scorer.get();
      deps.request.max_tokens = cfg.at("llm").at("max_tokens").get<int>();
      deps.request.temperature = cfg.at("llm").at("temperature").get<double>();
      deps.request.seed = seed + std::hash<std::string>{}(video.video_id) % 1000003 * static_cast<std::uint64_t>(max_attempts);
      const auto outcome = filter::filter_loop(video, caps, theta, max_attempts, deps);
      audit.write(outcome.to_json());
      std::lock_guard lock(mu);
      if (outcome.accepted) {
        accepted[video.video_id] = *outcome.accepted;
        data::save_ctn_file(accepted, ctn_path);
      } else {
        ++exhausted;
      }
    } catch (const Error& e) {
      std::lock_guard lock(mu);
      ++failed;
      ctx.err << video.video_id << ": " << e.what() << '\n';
    }
  });
  if (!fs::exists(ctn_path)) data::save_ctn_file(accepted, ctn_path);
  ctx.log << "processed " << pending.size() << " videos, accepted " << accepted.size() << " total, exhausted "
          << exhausted << ", failed " << failed << '\n';
  if (failed) return kRuntimeFailure;
  return exhausted ? kPartial : kOk;
}

int cmd_gen(Context& ctx) {
  const auto m = load_dataset(ctx.cfg);
  std::vector<PendingVideo> pending;
  for (const auto& r : m.records) {
    auto it = m.caption_index.find(r.video_id);
    if (it != m.caption_index.end()) pending.push_back({r, it->second});
  }
  return run_filter(ctx, m, std::move(pending), {});
}

int cmd_label(Context& ctx) {
  const auto m = load_dataset(ctx.cfg);
  const auto k = ctx.cfg.at("captioner").at("frames").get<std::size_t>();
  if (k == 0) throw Error(ErrorCode::config_error, "captioner.frames must be >= 1");
  auto captioner = make_captioner(ctx.cfg);
  data::AutoDecoder decoder;
  std::vector<PendingVideo> pending;
  for (const auto& r : m.records)
    if (!m.caption_index.count(r.video_id)) pending.push_back({r, std::nullopt});

  const auto labels_path = ctx.out / "frame_captions.jsonl";
  std::set<std::string> labelled;
  std::map<std::string, data::DescriptiveCaptionSet> known;
  if (fs::exists(labels_path))
    for (const auto& j : util::read_jsonl(labels_path)) {
      const auto id = j.at("video_id").get<std::string>();
      known[id] = data::DescriptiveCaptionSet{id, j.at("captions").get<std::vector<std::string>>()};
    }
  for (auto& p : pending) {
    auto it = known.find(p.record.video_id);
    if (it != known.end()) p.captions = it->second;
  }
  util::JsonlWriter labels(labels_path);
  std::mutex mu;
  auto describe = [&](const data::VideoRecord& v) {
    const auto frames = data::sample_equally_spaced(v, k, decoder);
    std::vector<std::string> texts;
    for (const auto& f : frames.frames) texts.push_back(captioner->caption(f));
    auto caps = prompt::captions_from_frame_texts(texts, v.video_id);
    labels.write({{"video_id", v.video_id}, {"captions", caps.captions}, {"short_clip", frames.short_clip}});
    return caps;
  };
  return run_filter(ctx, m, std::move(pending), describe);
}

int cmd_filter_stats(Context& ctx) {
  const auto audit_path = ctx.out / "audit.jsonl";
  if (!fs::exists(audit_path)) throw Error(ErrorCode::missing_asset, "no audit log at " + audit_path.string());
  std::vector<double> scores;
  std::size_t videos = 0, accepted = 0, attempts = 0;
  for (const auto& j : util::read_jsonl(audit_path)) {
    ++videos;
    if (!j.at("accepted").is_null()) ++accepted;
    for (const auto& a : j.at("attempts")) {
      ++attempts;
      if (a.contains("score")) scores.push_back(a.at("score").get<double>());
    }
  }
  const double theta = ctx.cfg.at("filter").at("theta").get<double>();
  const auto h = filter::score_histogram(scores, ctx.cfg.at("filter").at("bin_width").get<double>(), theta);
  util::write_text(ctx.out / "histogram.csv", h.to_csv());
  const json summary{{"videos", videos},         {"accepted", accepted},
                     {"exhausted", videos - accepted}, {"attempts", attempts},
                     {"scored", h.total},        {"theta", theta},
                     {"fraction_above", h.fraction_above}};
  util::write_json(ctx.out / "filter_stats.json", summary);
  ctx.log << summary.dump(2) << '\n';
  return kOk;
}

train::TrainConfig train_config(const json& cfg, train::Stage stage, const char* section) {
  auto tc = train::TrainConfig::from_json(cfg.at("train").at(section), stage);
  tc.seed = cfg.at("seed").get<std::uint64_t>();
  tc.dataset = str(cfg, "/manifest");
  return tc;
}

fs::path stage1_run(const Context& ctx) {
  const auto s = str(ctx.cfg, "/stage1_run");
  return s.empty() ? ctx.out : fs::path(s);
}

int cmd_train_stage1(Context& ctx) {
  const train::RunDirectory run(ctx.out);
  if (fs::exists(run.checkpoint("stage1_cause")) && fs::exists(run.checkpoint("stage1_effect"))) {
    ctx.log << "stage-1 checkpoints present, nothing to do\n";
    return kOk;
  }
  const auto m = load_dataset(ctx.cfg);
  const auto tc = train_config(ctx.cfg, train::Stage::stage1, "stage1");
  const auto enc = model::EncoderConfig::from_json(ctx.cfg.at("encoder"));
  data::AutoDecoder decoder;
  const auto ex = train::load_examples(m, data::Split::train, decoder, enc.image_size, false);
  if (ex.empty()) throw Error(ErrorCode::empty_input, "no labelled training videos");
  run.write_config(ctx.cfg);
  const auto pair = train::train_stage1_pair(enc, train::build_vocabulary(ex), tc, ex, &run);
  ctx.log << "stage 1: L_cause " << pair.cause_log.epoch_loss.back() << ", L_effect "
          << pair.effect_log.epoch_loss.back() << ", updates " << pair.cause_log.updates + pair.effect_log.updates
          << '\n';
  return kOk;
}

model::GenerationOptions decode_options(const json& cfg) {
  model::GenerationOptions o;
  const auto s = str(cfg, "/decode/strategy");
  if (s == "beam") o.strategy = model::DecodeStrategy::beam;
  else if (s != "greedy") throw Error(ErrorCode::config_error, "decode.strategy must be 'greedy' or 'beam'");
  o.beam_width = cfg.at("decode").at("beam_width").get<std::size_t>();
  return o;
}

void write_predictions(const fs::path& path, const std::vector<train::Prediction>& preds) {
  std::string text;
  for (const auto& p : preds)
    text += json{{"video_id", p.video_id}, {"caption", p.caption}, {"truncated", p.truncated}}.dump() + "\n";
  util::write_text(path, text);
}

int cmd_train_stage2(Context& ctx) {
  const train::RunDirectory run(ctx.out);
  if (fs::exists(run.checkpoint("stage2_last"))) {
    ctx.log << "stage-2 checkpoint present, nothing to do\n";
    return kOk;
  }
  const auto src = stage1_run(ctx);
  const auto cause = model::RoleEncoderPair::load(src / "checkpoints" / "stage1_cause.ckpt");
  const auto effect = model::RoleEncoderPair::load(src / "checkpoints" / "stage1_effect.ckpt");
  const auto m = load_dataset(ctx.cfg);
  const auto tc = train_config(ctx.cfg, train::Stage::stage2, "stage2");
  data::AutoDecoder decoder;
  const int size = cause.config().image_size;
  const auto ex = train::load_examples(m, data::Split::train, decoder, size, false);
  const auto val = train::load_examples(m, data::Split::val, decoder, size, false);
  if (ex.empty()) throw Error(ErrorCode::empty_input, "no labelled training videos");

  auto features = [&](const std::vector<train::Example>& xs) {
    std::vector<model::StreamFeatures> f;
    for (const auto& e : xs) f.push_back(model::extract_features(e.frames, cause, effect));
    return f;
  };
  const auto train_feats = features(ex);
  const auto val_feats = features(val);
  model::Stage2Model s2(model::Stage2Config::from_json(ctx.cfg.at("stage2")), cause.config().embed_dim, cause.vocab(),
                        model::StreamWiring::both, tc.seed * 2 + 3);
  const train::FrozenLosses frozen{train::stage1_loss(cause, ex, tc.batch_size),
                                   train::stage1_loss(effect, ex, tc.batch_size)};
  train::ValidationFn validate;
  if (val.size() >= 2)
    validate = [&](const model::Stage2Model& mdl) {
      return train::corpus_cider(train::predict(mdl, val_feats, decode_options(ctx.cfg)), val);
    };
  run.write_config(ctx.cfg);
  const auto outcome = train::train_stage2(s2, tc, train_feats, ex, frozen, validate, &run);
  if (!outcome.epochs.empty()) ctx.log << "stage 2: L_total " << outcome.epochs.back().l_total << '\n';
  return kOk;
}

int cmd_ablate(Context& ctx) {
  const auto id = train::parse_variant(str(ctx.cfg, "/ablation/id"));
  const auto summary_path = ctx.out / "ablation.json";
  if (fs::exists(summary_path) && util::read_json(summary_path).value("variant", "") == train::to_string(id)) {
    ctx.log << "ablation " << train::to_string(id) << " already complete\n";
    return kOk;
  }
  const auto m = load_dataset(ctx.cfg);
  train::AblationAssets assets;
  assets.encoder = model::EncoderConfig::from_json(ctx.cfg.at("encoder"));
  assets.stage2 = model::Stage2Config::from_json(ctx.cfg.at("stage2"));
  assets.seed = ctx.cfg.at("seed").get<std::uint64_t>();
  const auto source = str(ctx.cfg, "/ablation/source_run");
  if (!source.empty()) assets.source_run = source;
  if (!str(ctx.cfg, "/stage1_run").empty()) assets.stage1_run = stage1_run(ctx);
  const auto plan = train::plan_for(id);
  if (plan.cross_dataset && !assets.source_run)
    throw Error(ErrorCode::config_error, "ablation.source_run is required for " + std::string(train::to_string(id)));

  data::AutoDecoder decoder;
  int size = assets.encoder.image_size;
  if (assets.source_run)
    size = model::RoleEncoderPair::load(*assets.source_run / "checkpoints" / "stage1_cause.ckpt").config().image_size;
  const auto ex = train::load_examples(m, data::Split::train, decoder, size, false);
  const auto test = train::load_examples(m, data::Split::test, decoder, size, false);
  if (ex.empty() && plan.train_stage2) throw Error(ErrorCode::empty_input, "no labelled training videos");
  assets.vocab = train::build_vocabulary(ex);

  const train::RunDirectory run(ctx.out);
  run.write_config(ctx.cfg);
  const auto r = train::run_ablation(id, assets, train_config(ctx.cfg, train::Stage::stage1, "stage1"),
                                     train_config(ctx.cfg, train::Stage::stage2, "stage2"), ex, test, &run);
  write_predictions(ctx.out / "predictions.jsonl", r.predictions);
  const json summary{{"variant", train::to_string(id)},
                     {"updates", r.updates},
                     {"test_videos", test.size()},
                     {"cider", r.cider},
                     {"wiring", model::to_string(plan.wiring)},
                     {"train_stage1", plan.train_stage1},
                     {"train_stage2", plan.train_stage2}};
  util::write_json(summary_path, summary);
  ctx.log << summary.dump(2) << '\n';
  return kOk;
}

std::vector<train::Prediction> read_predictions(const Context& ctx) {
  auto path = str(ctx.cfg, "/eval/predictions");
  const fs::path p = path.empty() ? ctx.out / "predictions.jsonl" : fs::path(path);
  if (!fs::exists(p)) throw Error(ErrorCode::missing_asset, "no predictions at " + p.string());
  std::vector<train::Prediction> out;
  for (const auto& j : util::read_jsonl(p))
    out.push_back({j.at("video_id").get<std::string>(), j.at("caption").get<std::string>(), j.value("truncated", false)});
  return out;
}

const data::CtnCaption& ground_truth(const data::DatasetManifest& m, const std::string& id) {
  auto it = m.ctn_index.find(id);
  if (it == m.ctn_index.end()) throw Error(ErrorCode::missing_asset, id + ": no ground-truth CTN caption");
  return it->second;
}

int cmd_eval(Context& ctx) {
  const auto m = load_dataset(ctx.cfg);
  const auto preds = read_predictions(ctx);
  std::vector<metrics::EvalPair> pairs;
  for (const auto& p : preds) pairs.push_back({p.video_id, p.caption, {data::combine_caption(ground_truth(m, p.video_id))}});
  metrics::CiderOptions opts;
  opts.cider_d = ctx.cfg.at("eval").at("cider_d").get<bool>();
  auto report = metrics::evaluate(pairs, opts);
  const auto tool = str(ctx.cfg, "/eval/spice_tool");
  if (!tool.empty()) metrics::attach_spice(report, metrics::spice_adapter(pairs, tool, ctx.out / "spice"));

  const auto judged = ctx.out / "judge.jsonl";
  if (fs::exists(judged)) {
    std::map<std::string, json> by_id;
    for (auto& j : util::read_jsonl(judged)) by_id[j.at("video_id").get<std::string>()] = j;
    for (auto& row : report.rows) {
      auto it = by_id.find(row.video_id);
      if (it == by_id.end()) continue;
      row.temporal = it->second.at("temporal_order").get<int>();
      row.causal = it->second.at("causal_chain").get<int>();
    }
  }
  util::write_text(ctx.out / "report.csv", report.to_csv());
  const auto summary = report.summary();
  util::write_json(ctx.out / "eval_summary.json", summary);
  ctx.log << summary.dump(2) << '\n';
  return kOk;
}

int cmd_judge(Context& ctx) {
  const auto m = load_dataset(ctx.cfg);
  const auto preds = read_predictions(ctx);
  const auto prompts = metrics::JudgePrompts::load(template_dir(ctx.cfg));
  auto gateway = make_gateway(ctx.cfg);
  const auto path = ctx.out / "judge.jsonl";
  std::set<std::string> done;
  if (fs::exists(path))
    for (const auto& j : util::read_jsonl(path)) done.insert(j.at("video_id").get<std::string>());

  std::vector<const train::Prediction*> pending;
  for (const auto& p : preds)
    if (!done.count(p.video_id)) pending.push_back(&p);
  {
    util::JsonlWriter sink(path);
    fan_out(pending.size(), ctx.cfg.at("workers").get<std::size_t>(), [&](std::size_t i) {
      const auto& p = *pending[i];
      const auto r = metrics::judge_pair(ground_truth(m, p.video_id), p.caption, *gateway, prompts);
      sink.write({{"video_id", p.video_id},
                  {"temporal_order", r.temporal_order},
                  {"causal_chain", r.causal_chain},
                  {"temporal_unparsed", r.temporal_unparsed},
                  {"causal_unparsed", r.causal_unparsed},
                  {"rationale", r.rationale}});
    });
  }
  std::vector<metrics::JudgeResult> all;
  for (const auto& j : util::read_jsonl(path)) {
    metrics::JudgeResult r;
    r.temporal_order = j.at("temporal_order").get<int>();
    r.causal_chain = j.at("causal_chain").get<int>();
    r.temporal_unparsed = j.value("temporal_unparsed", false);
    r.causal_unparsed = j.value("causal_unparsed", false);
    all.push_back(r);
  }
  const auto s = metrics::aggregate(all);
  util::write_json(ctx.out / "judge_summary.json", {{"temporal_order", s.temporal},
                                                     {"causal_chain", s.causal},
                                                     {"count", s.count},
                                                     {"unparsed", s.unparsed},
                                                     {"formatted", s.format()}});
  ctx.log << "temporal / causal: " << s.format() << " over " << s.count << " captions\n";
  return kOk;
}

int cmd_serve(Context& ctx) {
  const auto batch_path = str(ctx.cfg, "/serve/batch");
  if (batch_path.empty()) throw Error(ErrorCode::config_error, "serve.batch is required");
  auto batch = humaneval::EvalBatch::from_json(util::read_json(batch_path));
  auto store = std::make_shared<humaneval::RatingStore>(ctx.out);
  humaneval::EvalService service(std::move(batch), store);
  const auto host = str(ctx.cfg, "/serve/host");
  const int port = ctx.cfg.at("serve").at("port").get<int>();
  ctx.log << "serving on " << host << ':' << port << '\n' << std::flush;
  service.listen(host, port);
  return kOk;
}

int cmd_export(Context& ctx) {
  const auto src = stage1_run(ctx);
  const auto cause = model::RoleEncoderPair::load(src / "checkpoints" / "stage1_cause.ckpt");
  const auto effect = model::RoleEncoderPair::load(src / "checkpoints" / "stage1_effect.ckpt");
  const auto m = load_dataset(ctx.cfg);
  const auto split_name = str(ctx.cfg, "/export/split");
  data::Split split;
  if (split_name == "train") split = data::Split::train;
  else if (split_name == "val") split = data::Split::val;
  else if (split_name == "test") split = data::Split::test;
  else throw Error(ErrorCode::config_error, "export.split must be train, val or test");

  const auto path = ctx.out / "embeddings.jsonl";
  std::set<std::string> done;
  if (fs::exists(path))
    for (const auto& j : util::read_jsonl(path))
      if (j.at("role") == "effect") done.insert(j.at("video_id").get<std::string>());
  util::JsonlWriter sink(path);
  data::AutoDecoder decoder;
  nn::NoGradGuard guard;
  std::size_t written = 0;
  for (const auto& r : m.in_split(split)) {
    if (done.count(r.video_id)) continue;
    const auto frames = data::resize_frames(data::sample_frames(r, decoder), cause.config().image_size);
    for (const auto* enc : {&cause, &effect}) {
      const auto e = enc->embed_video(frames);
      sink.write({{"video_id", r.video_id},
                  {"role", model::to_string(enc->role())},
                  {"split", split_name},
                  {"embedding", e.values()}});
    }
    ++written;
  }
  ctx.log << "exported " << written << " videos\n";
  return kOk;
}

int dispatch(Context& ctx) {
  const auto& c = ctx.command;
  if (c == "gen") return cmd_gen(ctx);
  if (c == "label") return cmd_label(ctx);
  if (c == "filter-stats") return cmd_filter_stats(ctx);
  if (c == "train-stage1") return cmd_train_stage1(ctx);
  if (c == "train-stage2") return cmd_train_stage2(ctx);
  if (c == "ablate") return cmd_ablate(ctx);
  if (c == "eval") return cmd_eval(ctx);
  if (c == "judge") return cmd_judge(ctx);
  if (c == "humaneval-serve") return cmd_serve(ctx);
  if (c == "export-embeddings") return cmd_export(ctx);
  throw Error(ErrorCode::config_error, "unknown command '" + c + "'");
}

bool is_config_code(ErrorCode c) {
  return c == ErrorCode::config_error || c == ErrorCode::unknown_variant || c == ErrorCode::unknown_template;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Causal-temporal narrative captioning toolkit"};
  std::string command, config_path, out_dir, variant;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<double> theta;
  std::optional<int> max_attempts;
  std::vector<std::string> names(kCommands.begin(), kCommands.end());
  app.add_option("command", command, "Command to run")->required()->check(CLI::IsMember(names));
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--set", overrides, "Override a config key, e.g. --set train.stage2.epochs=5");
  app.add_option("--seed", seed, "Random seed");
  app.add_option("--workers", workers, "Parallel videos");
  app.add_option("--theta", theta, "Relevance threshold");
  app.add_option("--max-attempts", max_attempts, "Generation attempts per video");
  app.add_option("--id", variant, "Ablation variant");
  app.add_option("--out", out_dir, "Run directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    return kConfigError;
  }

  json cfg = default_config();
  try {
    if (!config_path.empty()) merge_config(cfg, util::read_json(config_path));
    for (const auto& o : overrides) apply_override(cfg, o);
    if (seed) cfg["seed"] = *seed;
    if (workers) cfg["workers"] = *workers;
    if (theta) cfg["filter"]["theta"] = *theta;
    if (max_attempts) cfg["filter"]["max_attempts"] = *max_attempts;
    if (!variant.empty()) cfg["ablation"]["id"] = variant;
    if (!out_dir.empty()) cfg["out"] = out_dir;
    if (cfg.at("out").get<std::string>().empty()) throw Error(ErrorCode::config_error, "out must be set");
  } catch (const Error& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  }

  Context ctx{command, cfg, fs::path(cfg.at("out").get<std::string>()), out, err};
  try {
    fs::create_directories(ctx.out);
    util::write_json(ctx.out / ("resolved_" + command + ".json"), cfg);
    return dispatch(ctx);
  } catch (const Error& e) {
    err << e.what() << '\n';
    return is_config_code(e.code()) ? kConfigError : kRuntimeFailure;
  } catch (const nlohmann::json::exception& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << '\n';
    return kRuntimeFailure;
  }
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace ctn::cli
