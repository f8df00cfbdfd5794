#include "ctn/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "ctn/error.hpp"
#include "ctn/metrics/metrics.hpp"
#include "ctn/model/contrastive.hpp"
#include "ctn/nn/ops.hpp"
#include "ctn/util/jsonl.hpp"

namespace ctn::train {

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::stage1: return "stage1";
    case Stage::stage2: return "stage2";
    case Stage::finetune_x: return "finetune_x";
  }
  return "stage1";
}

Stage parse_stage(std::string_view s) {
  if (s == "stage1") return Stage::stage1;
  if (s == "stage2") return Stage::stage2;
  if (s == "finetune_x") return Stage::finetune_x;
  throw Error(ErrorCode::config_error, "unknown stage '" + std::string(s) + "'");
}

TrainConfig TrainConfig::defaults(Stage stage) {
  TrainConfig c;
  c.stage = stage;
  c.batch_size = 64;
  switch (stage) {
    case Stage::stage1:
      c.learning_rate = 1e-4;
      c.epochs = 10;
      break;
    case Stage::stage2:
      c.learning_rate = 1e-6;
      c.epochs = 50;
      break;
    case Stage::finetune_x:
      c.learning_rate = 5e-7;
      c.epochs = 50;
      break;
  }
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw Error(ErrorCode::config_error, "learning_rate must be finite and >= 0");
  if (batch_size == 0) throw Error(ErrorCode::config_error, "batch_size must be >= 1");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"stage", to_string(stage)},   {"learning_rate", learning_rate},
          {"batch_size", batch_size},    {"epochs", epochs},
          {"seed", seed},                {"dataset", dataset},
          {"val_every", val_every},      {"checkpoint_every", checkpoint_every},
          {"optimizer", {{"name", "adam"}, {"beta1", 0.9}, {"beta2", 0.999}, {"epsilon", 1e-8}}}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, Stage stage) {
  TrainConfig c = defaults(stage);
  if (j.is_null()) return c;
  if (!j.is_object()) throw Error(ErrorCode::config_error, "train config must be an object");
  static const std::set<std::string> known = {"stage",   "learning_rate", "batch_size", "epochs",   "seed",
                                              "dataset", "val_every",     "checkpoint_every", "optimizer"};
  for (const auto& [k, _] : j.items())
    if (!known.count(k)) throw Error(ErrorCode::config_error, "unknown train config key '" + k + "'");
  try {
    if (j.contains("stage")) c.stage = parse_stage(j["stage"].get<std::string>());
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.dataset = j.value("dataset", c.dataset);
    c.val_every = j.value("val_every", c.val_every);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config_error, e.what());
  }
  c.validate();
  return c;
}

std::vector<Example> load_examples(const data::DatasetManifest& m, data::Split split,
                                   const data::VideoDecoder& decoder, int image_size, bool require_ctn) {
  std::vector<Example> out;
  for (const auto& r : m.in_split(split)) {
    auto it = m.ctn_index.find(r.video_id);
    if (it == m.ctn_index.end()) {
      if (require_ctn) throw Error(ErrorCode::missing_asset, r.video_id + ": no CTN caption");
      continue;
    }
    out.push_back({r.video_id, data::resize_frames(data::sample_frames(r, decoder), image_size), it->second});
  }
  return out;
}

text::Vocabulary build_vocabulary(std::span<const Example> examples) {
  std::vector<std::string> texts;
  texts.reserve(examples.size());
  for (const auto& e : examples) texts.push_back(data::combine_caption(e.caption));
  return text::Vocabulary::build(texts);
}

std::string role_text(const data::CtnCaption& c, model::Role role) {
  switch (role) {
    case model::Role::cause: return c.cause;
    case model::Role::effect: return c.effect;
    case model::Role::combined: return data::combine_caption(c);
  }
  return c.cause;
}

RunDirectory::RunDirectory(std::filesystem::path root) : root_(std::move(root)) {
  std::filesystem::create_directories(root_ / "checkpoints");
}

std::filesystem::path RunDirectory::checkpoint(const std::string& name) const {
  return root_ / "checkpoints" / (name + ".ckpt");
}

void RunDirectory::write_config(const nlohmann::json& resolved) const { util::write_json(root_ / "config.json", resolved); }

void RunDirectory::reset_metrics() const {
  util::write_text(root_ / "metrics.csv", "epoch,L_cause,L_effect,L_caption,L_total,val_CIDEr\n");
}

void RunDirectory::append_metrics(const EpochMetrics& m) const {
  const auto path = root_ / "metrics.csv";
  if (!std::filesystem::exists(path)) reset_metrics();
  std::ofstream out(path, std::ios::app);
  out << std::setprecision(17);
  auto opt = [&](const std::optional<double>& v) {
    if (v) out << *v;
  };
  out << m.epoch << ',';
  opt(m.l_cause);
  out << ',';
  opt(m.l_effect);
  out << ',';
  opt(m.l_caption);
  out << ',' << m.l_total << ',';
  opt(m.val_cider);
  out << '\n';
}

namespace {

std::vector<std::size_t> epoch_order(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Fisher-Yates with explicit draws keeps the order independent of the standard library.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

nn::Tensor batch_loss(const model::RoleEncoderPair& pair, std::span<const Example> examples,
                      std::span<const std::size_t> idx) {
  std::vector<nn::Tensor> videos, texts;
  for (auto i : idx) {
    videos.push_back(pair.embed_video(examples[i].frames));
    texts.push_back(pair.embed_text(role_text(examples[i].caption, pair.role())));
  }
  const nn::Tensor v = videos.size() == 1 ? videos.front() : nn::concat_rows(videos);
  const nn::Tensor t = texts.size() == 1 ? texts.front() : nn::concat_rows(texts);
  return model::contrastive_loss(nn::matmul_nt(v, t), pair.scale_tensor()).total;
}

}  // namespace

double stage1_loss(const model::RoleEncoderPair& pair, std::span<const Example> examples, std::size_t batch_size) {
  if (examples.empty()) throw Error(ErrorCode::empty_input, "no examples");
  nn::NoGradGuard guard;
  double sum = 0.0;
  std::size_t batches = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(examples.size(), start + batch_size); ++i) idx.push_back(i);
    sum += batch_loss(pair, examples, idx).item();
    ++batches;
  }
  return sum / static_cast<double>(batches);
}

Stage1Outcome train_stage1(model::RoleEncoderPair& pair, const TrainConfig& cfg, std::span<const Example> examples) {
  cfg.validate();
  if (examples.empty()) throw Error(ErrorCode::empty_input, "empty training split");
  Stage1Outcome out;
  out.epoch_loss.push_back(stage1_loss(pair, examples, cfg.batch_size));
  pair.params().set_trainable(true);
  nn::Adam adam(pair.params().tensors(), nn::AdamConfig{cfg.learning_rate});
  std::mt19937_64 rng(cfg.seed ^ (0x5eedULL + static_cast<std::uint64_t>(pair.role())));
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = epoch_order(examples.size(), rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      nn::Tensor loss = batch_loss(pair, examples, idx);
      sum += loss.item();
      ++batches;
      loss.backward();
      adam.step();
      pair.clamp_logit_scale();
    }
    out.epoch_loss.push_back(sum / static_cast<double>(batches));
  }
  out.updates = adam.steps();
  pair.params().set_trainable(false);
  return out;
}

Stage1Pair train_stage1_pair(const model::EncoderConfig& enc, const text::Vocabulary& vocab, const TrainConfig& cfg,
                             std::span<const Example> examples, const RunDirectory* run) {
  Stage1Pair p{model::RoleEncoderPair(model::Role::cause, enc, vocab, cfg.seed * 2 + 1),
               model::RoleEncoderPair(model::Role::effect, enc, vocab, cfg.seed * 2 + 2), {}, {}};
  p.cause_log = train_stage1(p.cause, cfg, examples);
  p.effect_log = train_stage1(p.effect, cfg, examples);
  if (run) {
    run->reset_metrics();
    for (std::size_t e = 0; e < p.cause_log.epoch_loss.size(); ++e) {
      EpochMetrics m;
      m.epoch = e;
      m.l_cause = p.cause_log.epoch_loss[e];
      m.l_effect = p.effect_log.epoch_loss[e];
      m.l_total = *m.l_cause + *m.l_effect;
      run->append_metrics(m);
    }
    p.cause.save(run->checkpoint("stage1_cause"), p.cause_log.updates);
    p.effect.save(run->checkpoint("stage1_effect"), p.effect_log.updates);
  }
  return p;
}

Stage2Outcome train_stage2(model::Stage2Model& m, const TrainConfig& cfg, std::span<const model::StreamFeatures> feats,
                           std::span<const Example> examples, FrozenLosses frozen, const ValidationFn& validate,
                           const RunDirectory* run) {
  cfg.validate();
  if (examples.empty()) throw Error(ErrorCode::empty_input, "empty training split");
  if (feats.size() != examples.size()) throw Error(ErrorCode::dimension_mismatch, "features and examples differ in count");
  for (const auto& e : examples) m.target_ids(data::combine_caption(e.caption));

  Stage2Outcome out;
  m.params().set_trainable(true);
  nn::Adam adam(m.params().tensors(), nn::AdamConfig{cfg.learning_rate});
  std::mt19937_64 rng(cfg.seed ^ 0xca97ULL);
  if (run) run->reset_metrics();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = epoch_order(examples.size(), rng);
    double sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      std::vector<nn::Tensor> losses;
      for (std::size_t k = start; k < start + count; ++k) {
        const auto i = order[k];
        losses.push_back(m.caption_loss(m.memory(feats[i]), data::combine_caption(examples[i].caption)));
        sum += losses.back().item();
      }
      nn::Tensor total = losses.size() == 1 ? losses.front() : nn::sum_all(nn::concat_rows(losses));
      total = nn::scale(total, 1.0 / static_cast<double>(count));
      total.backward();
      adam.step();
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.l_cause = frozen.l_cause;
    em.l_effect = frozen.l_effect;
    em.l_caption = sum / static_cast<double>(examples.size());
    em.l_total = model::total_loss(frozen.l_cause, frozen.l_effect, *em.l_caption);
    if (validate && cfg.val_every && epoch % cfg.val_every == 0) {
      em.val_cider = validate(m);
      if (!out.best_val_cider || *em.val_cider > *out.best_val_cider) {
        out.best_val_cider = em.val_cider;
        if (run) m.save(run->checkpoint("stage2_best"), adam.steps());
      }
    }
    if (run) {
      run->append_metrics(em);
      if (cfg.checkpoint_every && epoch % cfg.checkpoint_every == 0) m.save(run->checkpoint("stage2_last"), adam.steps());
    }
    out.epochs.push_back(em);
  }
  out.updates = adam.steps();
  m.params().set_trainable(false);
  if (run) m.save(run->checkpoint("stage2_last"), out.updates);
  return out;
}

std::vector<Prediction> predict(const model::Stage2Model& m, std::span<const model::StreamFeatures> feats,
                                const model::GenerationOptions& opts) {
  nn::NoGradGuard guard;
  std::vector<Prediction> out;
  for (const auto& f : feats) {
    const auto g = m.generate(m.memory(f), opts);
    out.push_back({f.video_id, g.text, g.truncated});
  }
  return out;
}

double corpus_cider(std::span<const Prediction> preds, std::span<const Example> examples) {
  if (preds.size() != examples.size()) throw Error(ErrorCode::dimension_mismatch, "predictions and examples differ");
  std::vector<metrics::EvalPair> pairs;
  for (std::size_t i = 0; i < preds.size(); ++i)
    pairs.push_back({preds[i].video_id, preds[i].caption, {data::combine_caption(examples[i].caption)}});
  return metrics::cider(pairs).mean;
}

}  // namespace ctn::train
