#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "ctn/model/stage1.hpp"
#include "ctn/model/stage2.hpp"
#include "ctn/train/trainer.hpp"

namespace ctn::train {

enum class AblationVariant {
  full_cen,
  e_combined,
  no_ft_single_clip,
  no_ft_two_clip,
  only_cause,
  only_effect,
  zero_shot_x,
  finetune_x,
};

inline constexpr std::array<AblationVariant, 8> kAllVariants = {
    AblationVariant::full_cen,       AblationVariant::e_combined, AblationVariant::no_ft_single_clip,
    AblationVariant::no_ft_two_clip, AblationVariant::only_cause, AblationVariant::only_effect,
    AblationVariant::zero_shot_x,    AblationVariant::finetune_x,
};

std::string_view to_string(AblationVariant v);
/// Throws unknown_variant.
AblationVariant parse_variant(std::string_view s);

enum class FeatureSource {
  /// Separate cause and effect encoders.
  two_encoders,
  /// One encoder trained on combined captions, its features fed to both streams.
  combined_encoder,
  /// One untrained encoder fed to both streams.
  single_untrained,
  /// Encoders and caption model loaded from a source run.
  source_run,
};

struct VariantPlan {
  AblationVariant variant = AblationVariant::full_cen;
  FeatureSource features = FeatureSource::two_encoders;
  bool train_stage1 = true;
  model::StreamWiring wiring = model::StreamWiring::both;
  bool train_stage2 = true;
  bool cross_dataset = false;
  std::optional<double> stage2_lr;
};

VariantPlan plan_for(AblationVariant v);

struct AblationAssets {
  text::Vocabulary vocab;
  model::EncoderConfig encoder;
  model::Stage2Config stage2;
  std::uint64_t seed = 0;
  /// Run directory of a finished full_cen run; required by the cross-dataset variants.
  std::optional<std::filesystem::path> source_run;
  /// Run directory holding trained stage-1 checkpoints; when set, variants that
  /// train separate encoders load them instead of retraining.
  std::optional<std::filesystem::path> stage1_run;
};

/// Encoders (possibly aliased) plus caption model for one variant.
class RunnableModel {
 public:
  RunnableModel(VariantPlan plan, std::shared_ptr<model::RoleEncoderPair> cause,
                std::shared_ptr<model::RoleEncoderPair> effect, std::shared_ptr<model::Stage2Model> captioner);

  const VariantPlan& plan() const { return plan_; }
  model::RoleEncoderPair& cause_encoder() { return *cause_; }
  model::RoleEncoderPair& effect_encoder() { return *effect_; }
  const model::RoleEncoderPair& cause_encoder() const { return *cause_; }
  const model::RoleEncoderPair& effect_encoder() const { return *effect_; }
  bool shares_encoder() const { return cause_ == effect_; }
  model::Stage2Model& captioner() { return *stage2_; }
  const model::Stage2Model& captioner() const { return *stage2_; }

  model::StreamFeatures features(const data::FrameSequence& frames) const;
  nn::Tensor logits(const data::FrameSequence& frames, std::span<const std::size_t> prefix) const;
  model::GeneratedCaption caption(const data::FrameSequence& frames, const model::GenerationOptions& opts = {}) const;

  std::uint64_t updates() const { return updates_; }
  void add_updates(std::uint64_t n) { updates_ += n; }

 private:
  VariantPlan plan_;
  std::shared_ptr<model::RoleEncoderPair> cause_;
  std::shared_ptr<model::RoleEncoderPair> effect_;
  std::shared_ptr<model::Stage2Model> stage2_;
  std::uint64_t updates_ = 0;
};

/// Fresh (or source-run loaded) model for a variant. Throws missing_asset when a
/// cross-dataset variant has no readable source run.
RunnableModel build_ablation(AblationVariant v, const AblationAssets& assets);

struct AblationResult {
  AblationVariant variant;
  std::vector<Prediction> predictions;
  double cider = 0.0;
  std::uint64_t updates = 0;
  std::optional<Stage1Outcome> cause_log;
  std::optional<Stage1Outcome> effect_log;
  std::optional<Stage2Outcome> stage2_log;
};

/// Builds, trains per the plan, and scores the variant on the evaluation examples.
/// A run directory receives checkpoints and metrics for later cross-dataset use.
AblationResult run_ablation(AblationVariant v, const AblationAssets& assets, const TrainConfig& stage1_cfg,
                            const TrainConfig& stage2_cfg, std::span<const Example> train,
                            std::span<const Example> eval, const RunDirectory* run = nullptr);

}  // namespace ctn::train
