#include "ctn/train/ablation.hpp"

#include "ctn/error.hpp"
#include "ctn/nn/ops.hpp"

namespace ctn::train {

namespace {

struct Name {
  AblationVariant v;
  std::string_view s;
};

constexpr std::array<Name, 8> kNames = {{
    {AblationVariant::full_cen, "full_cen"},
    {AblationVariant::e_combined, "e_combined"},
    {AblationVariant::no_ft_single_clip, "no_ft_single_clip"},
    {AblationVariant::no_ft_two_clip, "no_ft_two_clip"},
    {AblationVariant::only_cause, "only_cause"},
    {AblationVariant::only_effect, "only_effect"},
    {AblationVariant::zero_shot_x, "zero_shot_x"},
    {AblationVariant::finetune_x, "finetune_x"},
}};

std::filesystem::path run_checkpoint(const std::optional<std::filesystem::path>& run, const std::string& name) {
  if (!run) throw Error(ErrorCode::missing_asset, "cross-dataset variant needs a source run");
  const auto p = *run / "checkpoints" / (name + ".ckpt");
  if (!std::filesystem::exists(p)) throw Error(ErrorCode::missing_asset, "missing checkpoint " + p.string());
  return p;
}

}  // namespace

std::string_view to_string(AblationVariant v) {
  for (const auto& n : kNames)
    if (n.v == v) return n.s;
  return "full_cen";
}

AblationVariant parse_variant(std::string_view s) {
  for (const auto& n : kNames)
    if (n.s == s) return n.v;
  throw Error(ErrorCode::unknown_variant, "unknown ablation variant '" + std::string(s) + "'");
}

VariantPlan plan_for(AblationVariant v) {
  VariantPlan p;
  p.variant = v;
  p.features = FeatureSource::two_encoders;
  switch (v) {
    case AblationVariant::full_cen: break;
    case AblationVariant::e_combined: p.features = FeatureSource::combined_encoder; break;
    case AblationVariant::no_ft_single_clip:
      p.features = FeatureSource::single_untrained;
      p.train_stage1 = false;
      break;
    case AblationVariant::no_ft_two_clip: p.train_stage1 = false; break;
    case AblationVariant::only_cause: p.wiring = model::StreamWiring::cause_only; break;
    case AblationVariant::only_effect: p.wiring = model::StreamWiring::effect_only; break;
    case AblationVariant::zero_shot_x:
      p.features = FeatureSource::source_run;
      p.train_stage1 = false;
      p.train_stage2 = false;
      p.cross_dataset = true;
      break;
    case AblationVariant::finetune_x:
      p.features = FeatureSource::source_run;
      p.train_stage1 = false;
      p.cross_dataset = true;
      p.stage2_lr = TrainConfig::defaults(Stage::finetune_x).learning_rate;
      break;
  }
  return p;
}

RunnableModel::RunnableModel(VariantPlan plan, std::shared_ptr<model::RoleEncoderPair> cause,
                             std::shared_ptr<model::RoleEncoderPair> effect,
                             std::shared_ptr<model::Stage2Model> captioner)
    : plan_(plan), cause_(std::move(cause)), effect_(std::move(effect)), stage2_(std::move(captioner)) {
  if (!cause_ || !effect_ || !stage2_) throw Error(ErrorCode::invariant_violation, "incomplete ablation model");
}

model::StreamFeatures RunnableModel::features(const data::FrameSequence& frames) const {
  const bool distinct_roles = plan_.features == FeatureSource::two_encoders || plan_.features == FeatureSource::source_run;
  return model::extract_features(frames, *cause_, *effect_, distinct_roles);
}

nn::Tensor RunnableModel::logits(const data::FrameSequence& frames, std::span<const std::size_t> prefix) const {
  return stage2_->decoder_logits(stage2_->memory(features(frames)), prefix);
}

model::GeneratedCaption RunnableModel::caption(const data::FrameSequence& frames,
                                               const model::GenerationOptions& opts) const {
  nn::NoGradGuard guard;
  return stage2_->generate(stage2_->memory(features(frames)), opts);
}

RunnableModel build_ablation(AblationVariant v, const AblationAssets& a) {
  const VariantPlan plan = plan_for(v);
  using model::Role;
  using model::RoleEncoderPair;
  std::shared_ptr<RoleEncoderPair> cause, effect;
  switch (plan.features) {
    case FeatureSource::two_encoders:
      cause = std::make_shared<RoleEncoderPair>(Role::cause, a.encoder, a.vocab, a.seed * 2 + 1);
      effect = std::make_shared<RoleEncoderPair>(Role::effect, a.encoder, a.vocab, a.seed * 2 + 2);
      break;
    case FeatureSource::combined_encoder:
      cause = std::make_shared<RoleEncoderPair>(Role::combined, a.encoder, a.vocab, a.seed * 2 + 1);
      effect = cause;
      break;
    case FeatureSource::single_untrained:
      cause = std::make_shared<RoleEncoderPair>(Role::combined, a.encoder, a.vocab, a.seed * 2 + 1);
      effect = cause;
      break;
    case FeatureSource::source_run: {
      cause = std::make_shared<RoleEncoderPair>(RoleEncoderPair::load(run_checkpoint(a.source_run, "stage1_cause")));
      effect = std::make_shared<RoleEncoderPair>(RoleEncoderPair::load(run_checkpoint(a.source_run, "stage1_effect")));
      auto s2 = std::make_shared<model::Stage2Model>(model::Stage2Model::load(run_checkpoint(a.source_run, "stage2_last")));
      if (s2->feature_dim() != cause->config().embed_dim)
        throw Error(ErrorCode::dimension_mismatch, "source run encoders and caption model disagree on d");
      VariantPlan p = plan;
      p.wiring = s2->wiring();
      cause->params().set_trainable(false);
      effect->params().set_trainable(false);
      return RunnableModel(p, cause, effect, s2);
    }
  }
  auto s2 = std::make_shared<model::Stage2Model>(a.stage2, a.encoder.embed_dim, a.vocab, plan.wiring, a.seed * 2 + 3);
  return RunnableModel(plan, cause, effect, s2);
}

AblationResult run_ablation(AblationVariant v, const AblationAssets& assets, const TrainConfig& stage1_cfg,
                            const TrainConfig& stage2_cfg, std::span<const Example> train,
                            std::span<const Example> eval, const RunDirectory* run) {
  RunnableModel m = build_ablation(v, assets);
  const VariantPlan& plan = m.plan();
  AblationResult r{v, {}, 0.0, 0, {}, {}, {}};

  const bool reuse = assets.stage1_run && plan.train_stage1 && plan.features == FeatureSource::two_encoders;
  if (reuse) {
    m.cause_encoder() = model::RoleEncoderPair::load(run_checkpoint(assets.stage1_run, "stage1_cause"));
    m.effect_encoder() = model::RoleEncoderPair::load(run_checkpoint(assets.stage1_run, "stage1_effect"));
    if (m.cause_encoder().role() != model::Role::cause || m.effect_encoder().role() != model::Role::effect)
      throw Error(ErrorCode::role_mismatch, "stage-1 run does not hold cause and effect encoders");
    if (m.cause_encoder().config().embed_dim != m.captioner().feature_dim())
      throw Error(ErrorCode::dimension_mismatch, "stage-1 run encoders disagree with the caption model on d");
  } else if (plan.train_stage1) {
    r.cause_log = train_stage1(m.cause_encoder(), stage1_cfg, train);
    m.add_updates(r.cause_log->updates);
    if (!m.shares_encoder()) {
      r.effect_log = train_stage1(m.effect_encoder(), stage1_cfg, train);
      m.add_updates(r.effect_log->updates);
    }
  }
  m.cause_encoder().params().set_trainable(false);
  m.effect_encoder().params().set_trainable(false);
  if (run) {
    m.cause_encoder().save(run->checkpoint("stage1_cause"), r.cause_log ? r.cause_log->updates : 0);
    m.effect_encoder().save(run->checkpoint("stage1_effect"), r.effect_log ? r.effect_log->updates : 0);
  }

  if (plan.train_stage2) {
    std::vector<model::StreamFeatures> feats;
    feats.reserve(train.size());
    for (const auto& e : train) feats.push_back(m.features(e.frames));
    FrozenLosses frozen;
    frozen.l_cause = stage1_loss(m.cause_encoder(), train, stage1_cfg.batch_size);
    frozen.l_effect = m.shares_encoder() ? frozen.l_cause : stage1_loss(m.effect_encoder(), train, stage1_cfg.batch_size);
    TrainConfig cfg = stage2_cfg;
    if (plan.stage2_lr) cfg.learning_rate = *plan.stage2_lr;
    r.stage2_log = train_stage2(m.captioner(), cfg, feats, train, frozen, {}, run);
    m.add_updates(r.stage2_log->updates);
  } else if (run) {
    m.captioner().save(run->checkpoint("stage2_last"), 0);
  }

  std::vector<model::StreamFeatures> eval_feats;
  for (const auto& e : eval) eval_feats.push_back(m.features(e.frames));
  r.predictions = predict(m.captioner(), eval_feats);
  if (eval.size() >= 2) r.cider = corpus_cider(r.predictions, eval);
  r.updates = m.updates();
  return r;
}

}  // namespace ctn::train
