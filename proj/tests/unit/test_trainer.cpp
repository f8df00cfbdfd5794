#include <doctest.h>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ctn/train/ablation.hpp"
#include "ctn/train/toy.hpp"
#include "ctn/train/trainer.hpp"
#include "ctn/util/jsonl.hpp"
#include "support.hpp"

using namespace ctn;
using namespace ctn::train;
using testing::thrown_code;

namespace {

struct Toy {
  data::DatasetManifest manifest;
  std::vector<Example> train;
  std::vector<Example> test;
  text::Vocabulary vocab;
};

Toy make_toy(std::size_t videos = 8, std::size_t test = 0, std::uint64_t seed = 0) {
  Toy t;
  ToySpec spec;
  spec.videos = videos;
  spec.test = test;
  spec.seed = seed;
  t.manifest = make_toy_manifest(spec);
  data::SyntheticDecoder dec;
  t.train = load_examples(t.manifest, data::Split::train, dec, model::EncoderConfig{}.image_size);
  t.test = load_examples(t.manifest, data::Split::test, dec, model::EncoderConfig{}.image_size);
  t.vocab = build_vocabulary(t.train);
  return t;
}

const Toy& toy() {
  static const Toy t = make_toy();
  return t;
}

TrainConfig stage1_cfg(std::size_t epochs, double lr = 1e-3) {
  auto c = TrainConfig::defaults(Stage::stage1);
  c.learning_rate = lr;
  c.batch_size = 4;
  c.epochs = epochs;
  c.val_every = 0;
  c.checkpoint_every = 0;
  return c;
}

TrainConfig stage2_cfg(std::size_t epochs, double lr = 3e-3) {
  auto c = TrainConfig::defaults(Stage::stage2);
  c.learning_rate = lr;
  c.batch_size = 2;
  c.epochs = epochs;
  c.val_every = 0;
  c.checkpoint_every = 0;
  return c;
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST_CASE("published defaults") {
  const auto s1 = TrainConfig::defaults(Stage::stage1);
  CHECK(s1.learning_rate == 1e-4);
  CHECK(s1.epochs == 10);
  CHECK(s1.batch_size == 64);
  const auto s2 = TrainConfig::defaults(Stage::stage2);
  CHECK(s2.learning_rate == 1e-6);
  CHECK(s2.epochs == 50);
  CHECK(s2.batch_size == 64);
  const auto ft = TrainConfig::defaults(Stage::finetune_x);
  CHECK(ft.learning_rate == 5e-7);
  CHECK(ft.batch_size == 64);
}

TEST_CASE("train config json") {
  auto c = TrainConfig::defaults(Stage::stage2);
  c.seed = 9;
  const auto back = TrainConfig::from_json(c.to_json(), Stage::stage2);
  CHECK(back.learning_rate == c.learning_rate);
  CHECK(back.seed == 9);
  CHECK(back.to_json()["optimizer"]["name"] == "adam");
  auto j = c.to_json();
  j["momentum"] = 0.9;
  CHECK(thrown_code([&] { TrainConfig::from_json(j, Stage::stage2); }) == ErrorCode::config_error);
  c.batch_size = 0;
  CHECK(thrown_code([&] { c.validate(); }) == ErrorCode::config_error);
}

TEST_CASE("toy set shapes") {
  const auto& t = toy();
  CHECK(t.train.size() == 8);
  for (const auto& e : t.train) {
    CHECK(e.frames.frames.size() == 4);
    CHECK(e.frames.frames[0].width == 16);
  }
  CHECK(role_text(t.train[0].caption, model::Role::cause) == t.train[0].caption.cause);
  CHECK(role_text(t.train[0].caption, model::Role::combined) == data::combine_caption(t.train[0].caption));
}

TEST_CASE("missing captions are reported") {
  auto m = toy().manifest;
  m.ctn_index.erase(m.records.front().video_id);
  CHECK(thrown_code([&] { load_examples(m, data::Split::train, data::SyntheticDecoder{}, 16); }) ==
        ErrorCode::missing_asset);
}

TEST_CASE("three stage-1 epochs lower the cause loss") {
  const auto& t = toy();
  model::RoleEncoderPair pair(model::Role::cause, model::EncoderConfig{}, t.vocab, 1);
  const auto out = train_stage1(pair, stage1_cfg(3), t.train);
  REQUIRE(out.epoch_loss.size() == 4);
  CHECK(out.epoch_loss.back() < out.epoch_loss.front());
  CHECK(out.updates == 6);
}

TEST_CASE("zero learning rate leaves parameters bit identical") {
  const auto& t = toy();
  model::RoleEncoderPair pair(model::Role::effect, model::EncoderConfig{}, t.vocab, 2);
  const auto before = pair.params().hash();
  train_stage1(pair, stage1_cfg(2, 0.0), t.train);
  CHECK(pair.params().hash() == before);

  model::Stage2Model m(model::Stage2Config{}, pair.config().embed_dim, t.vocab, model::StreamWiring::both, 3);
  std::vector<model::StreamFeatures> feats;
  for (const auto& e : t.train) feats.push_back(model::extract_features(e.frames, pair, pair, false));
  const auto s2_before = m.params().hash();
  train_stage2(m, stage2_cfg(2, 0.0), feats, t.train, {});
  CHECK(m.params().hash() == s2_before);
}

TEST_CASE("fixed seeds reproduce training exactly") {
  const auto& t = toy();
  auto run = [&] {
    model::RoleEncoderPair pair(model::Role::cause, model::EncoderConfig{}, t.vocab, 4);
    auto cfg = stage1_cfg(2);
    cfg.seed = 11;
    const auto out = train_stage1(pair, cfg, t.train);
    return std::make_pair(out.epoch_loss.back(), pair.params().hash());
  };
  const auto a = run(), b = run();
  CHECK(a.first == doctest::Approx(b.first).epsilon(1e-12));
  CHECK(a.second == b.second);
}

TEST_CASE("empty training split is an error") {
  const auto& t = toy();
  model::RoleEncoderPair pair(model::Role::cause, model::EncoderConfig{}, t.vocab, 1);
  CHECK(thrown_code([&] { train_stage1(pair, stage1_cfg(1), std::span<const Example>{}); }) == ErrorCode::empty_input);
  model::Stage2Model m(model::Stage2Config{}, pair.config().embed_dim, t.vocab, model::StreamWiring::both, 3);
  CHECK(thrown_code([&] { train_stage2(m, stage2_cfg(1), {}, {}, {}); }) == ErrorCode::empty_input);
}

TEST_CASE("stage-2 training leaves stage-1 weights untouched and logs the total identity") {
  const auto& t = toy();
  testing::TempDir dir;
  RunDirectory run(dir.path());
  auto pair = train_stage1_pair(model::EncoderConfig{}, t.vocab, stage1_cfg(1), t.train, &run);
  CHECK(std::filesystem::exists(run.checkpoint("stage1_cause")));
  CHECK(std::filesystem::exists(run.checkpoint("stage1_effect")));
  const auto hc = pair.cause.params().hash(), he = pair.effect.params().hash();

  model::Stage2Model m(model::Stage2Config{}, pair.cause.config().embed_dim, t.vocab, model::StreamWiring::both, 5);
  std::vector<model::StreamFeatures> feats;
  for (const auto& e : t.train) feats.push_back(model::extract_features(e.frames, pair.cause, pair.effect));
  FrozenLosses frozen{stage1_loss(pair.cause, t.train, 4), stage1_loss(pair.effect, t.train, 4)};
  auto cfg = stage2_cfg(3);
  cfg.checkpoint_every = 1;
  run.reset_metrics();
  const auto out = train_stage2(m, cfg, feats, t.train, frozen, {}, &run);
  CHECK(pair.cause.params().hash() == hc);
  CHECK(pair.effect.params().hash() == he);
  CHECK(out.updates == 12);
  CHECK(std::filesystem::exists(run.checkpoint("stage2_last")));

  for (const auto& ep : out.epochs) {
    REQUIRE(ep.l_caption);
    CHECK(ep.l_total - *ep.l_caption == doctest::Approx(*ep.l_cause + *ep.l_effect).epsilon(1e-12));
    CHECK(*ep.l_cause == frozen.l_cause);
  }
  const auto rows = read_csv(dir / "metrics.csv");
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == std::vector<std::string>{"epoch", "L_cause", "L_effect", "L_caption", "L_total", "val_CIDEr"});
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double lc = std::stod(rows[i][1]), le = std::stod(rows[i][2]), lcap = std::stod(rows[i][3]),
                 lt = std::stod(rows[i][4]);
    CHECK(lt - lcap == doctest::Approx(lc + le).epsilon(1e-9));
  }
}

TEST_CASE("validation keeps the best caption model") {
  const auto& t = toy();
  testing::TempDir dir;
  RunDirectory run(dir.path());
  model::RoleEncoderPair c(model::Role::cause, model::EncoderConfig{}, t.vocab, 1),
      e(model::Role::effect, model::EncoderConfig{}, t.vocab, 2);
  model::Stage2Model m(model::Stage2Config{}, c.config().embed_dim, t.vocab, model::StreamWiring::both, 5);
  std::vector<model::StreamFeatures> feats;
  for (const auto& ex : t.train) feats.push_back(model::extract_features(ex.frames, c, e));
  int calls = 0;
  auto cfg = stage2_cfg(4);
  cfg.val_every = 2;
  const auto out = train_stage2(m, cfg, feats, t.train, {}, [&](const model::Stage2Model&) { return double(++calls); }, &run);
  CHECK(calls == 2);
  CHECK(out.best_val_cider.value() == 2.0);
  CHECK(std::filesystem::exists(run.checkpoint("stage2_best")));
  CHECK(out.epochs[1].val_cider.value() == 1.0);
  CHECK_FALSE(out.epochs[0].val_cider);
}

TEST_CASE("variant plans") {
  for (auto v : kAllVariants) CHECK(parse_variant(to_string(v)) == v);
  CHECK(thrown_code([] { parse_variant("full"); }) == ErrorCode::unknown_variant);
  const auto full = plan_for(AblationVariant::full_cen);
  const auto noft = plan_for(AblationVariant::no_ft_two_clip);
  CHECK(full.train_stage1);
  CHECK_FALSE(noft.train_stage1);
  CHECK(noft.features == full.features);
  CHECK(noft.wiring == full.wiring);
  CHECK(noft.train_stage2 == full.train_stage2);
  CHECK(noft.cross_dataset == full.cross_dataset);
  CHECK(noft.stage2_lr == full.stage2_lr);
  CHECK(plan_for(AblationVariant::only_cause).wiring == model::StreamWiring::cause_only);
  CHECK(plan_for(AblationVariant::only_effect).wiring == model::StreamWiring::effect_only);
  CHECK(plan_for(AblationVariant::e_combined).features == FeatureSource::combined_encoder);
  CHECK(plan_for(AblationVariant::no_ft_single_clip).features == FeatureSource::single_untrained);
  CHECK_FALSE(plan_for(AblationVariant::zero_shot_x).train_stage2);
  CHECK(plan_for(AblationVariant::finetune_x).stage2_lr.value() == 5e-7);
}

TEST_CASE("single-stream variants attend to n_frames positions") {
  const auto& t = toy();
  AblationAssets assets{t.vocab, model::EncoderConfig{}, model::Stage2Config{}, 1, {}, {}};
  const auto& frames = t.train[0].frames;
  auto cause = build_ablation(AblationVariant::only_cause, assets);
  CHECK(cause.captioner().memory(cause.features(frames)).rows() == frames.frames.size());
  auto full = build_ablation(AblationVariant::full_cen, assets);
  CHECK(full.captioner().memory(full.features(frames)).rows() == 2 * frames.frames.size());
  auto single = build_ablation(AblationVariant::no_ft_single_clip, assets);
  CHECK(single.shares_encoder());
  const auto f = single.features(frames);
  CHECK(std::equal(f.cause.values().begin(), f.cause.values().end(), f.effect.values().begin()));
  auto combined = build_ablation(AblationVariant::e_combined, assets);
  CHECK(combined.shares_encoder());
  CHECK(combined.cause_encoder().role() == model::Role::combined);
}

TEST_CASE("cross-dataset variants need a source run") {
  const auto& t = toy();
  AblationAssets assets{t.vocab, model::EncoderConfig{}, model::Stage2Config{}, 1, {}, {}};
  CHECK(thrown_code([&] { build_ablation(AblationVariant::zero_shot_x, assets); }) == ErrorCode::missing_asset);
  testing::TempDir empty;
  assets.source_run = empty.path();
  CHECK(thrown_code([&] { build_ablation(AblationVariant::finetune_x, assets); }) == ErrorCode::missing_asset);
}

TEST_CASE("every variant runs a forward pass and cross-dataset variants respect their trainable sets") {
  const auto& t = toy();
  const auto other = make_toy(2, 0, 77);
  testing::TempDir src_dir;
  RunDirectory src(src_dir.path());
  AblationAssets assets{t.vocab, model::EncoderConfig{}, model::Stage2Config{}, 3, {}, {}};
  const auto full = run_ablation(AblationVariant::full_cen, assets, stage1_cfg(1), stage2_cfg(1), t.train,
                                 std::span(t.train).first(2), &src);
  CHECK(full.updates > 0);
  CHECK(full.predictions.size() == 2);
  assets.source_run = src_dir.path();
  const auto cause_hash = model::RoleEncoderPair::load(src.checkpoint("stage1_cause")).params().hash();

  for (auto v : kAllVariants) {
    CAPTURE(to_string(v));
    auto m = build_ablation(v, assets);
    for (const auto& e : other.train) {
      const auto f = m.features(e.frames);
      CHECK(f.cause.rows() == e.frames.frames.size());
      CHECK(f.effect.cols() == m.captioner().feature_dim());
      const std::vector<std::size_t> prefix{text::Vocabulary::kBos};
      const auto logits = m.logits(e.frames, prefix);
      CHECK(logits.rows() == 1);
      CHECK(logits.cols() == t.vocab.size());
    }
  }

  const auto zero = run_ablation(AblationVariant::zero_shot_x, assets, stage1_cfg(1), stage2_cfg(1), other.train,
                                 other.train);
  CHECK(zero.updates == 0);
  CHECK(zero.predictions.size() == 2);

  testing::TempDir ft_dir;
  RunDirectory ft_run(ft_dir.path());
  const auto ft = run_ablation(AblationVariant::finetune_x, assets, stage1_cfg(1), stage2_cfg(1), other.train,
                               other.train, &ft_run);
  CHECK(ft.updates == 1);
  CHECK(model::RoleEncoderPair::load(ft_run.checkpoint("stage1_cause")).params().hash() == cause_hash);
  CHECK(model::Stage2Model::load(ft_run.checkpoint("stage2_last")).params().hash() !=
        model::Stage2Model::load(src.checkpoint("stage2_last")).params().hash());
}

TEST_CASE("corpus cider of perfect predictions is positive") {
  const auto& t = toy();
  std::vector<Prediction> preds;
  for (const auto& e : t.train) preds.push_back({e.video_id, data::combine_caption(e.caption), false});
  CHECK(corpus_cider(preds, t.train) > 0.0);
  preds.pop_back();
  CHECK(thrown_code([&] { corpus_cider(preds, t.train); }) == ErrorCode::dimension_mismatch);
}
