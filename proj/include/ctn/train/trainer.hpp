#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctn/data/dataset.hpp"
#include "ctn/data/video.hpp"
#include "ctn/model/stage1.hpp"
#include "ctn/model/stage2.hpp"

namespace ctn::train {

enum class Stage { stage1, stage2, finetune_x };

std::string_view to_string(Stage s);
Stage parse_stage(std::string_view s);

struct TrainConfig {
  Stage stage = Stage::stage1;
  double learning_rate = 1e-4;
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  std::string dataset;
  /// Validation CIDEr every n epochs (0 disables); needs >= 2 validation videos.
  std::size_t val_every = 1;
  /// Per-epoch checkpoint cadence when a run directory is attached (0 disables).
  std::size_t checkpoint_every = 1;

  /// Published schedule: stage1 1e-4 x 10, stage2 1e-6 x 50, finetune_x 5e-7 x 50; batch 64.
  static TrainConfig defaults(Stage stage);
  void validate() const;
  nlohmann::json to_json() const;
  /// Unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j, Stage stage);
};

/// One labelled video with frames already at encoder resolution.
struct Example {
  std::string video_id;
  data::FrameSequence frames;
  data::CtnCaption caption;
};

/// Samples frames (1 fps, <= 20) for every video of a split. Throws missing_asset
/// when require_ctn is set and a video lacks a CTN caption.
std::vector<Example> load_examples(const data::DatasetManifest& m, data::Split split,
                                   const data::VideoDecoder& decoder, int image_size, bool require_ctn = true);

/// Specials plus every token of the combined captions, lowercased by the shared tokenizer.
text::Vocabulary build_vocabulary(std::span<const Example> examples);

/// Text paired with the video for a role: cause part, effect part, or the combined caption.
std::string role_text(const data::CtnCaption& c, model::Role role);

struct EpochMetrics {
  std::size_t epoch = 0;
  std::optional<double> l_cause;
  std::optional<double> l_effect;
  std::optional<double> l_caption;
  double l_total = 0.0;
  std::optional<double> val_cider;
};

/// config.json, metrics.csv (epoch, L_cause, L_effect, L_caption, L_total, val_CIDEr), checkpoints/.
class RunDirectory {
 public:
  explicit RunDirectory(std::filesystem::path root);
  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path checkpoint(const std::string& name) const;
  void write_config(const nlohmann::json& resolved) const;
  void reset_metrics() const;
  void append_metrics(const EpochMetrics& m) const;

 private:
  std::filesystem::path root_;
};

/// Mean contrastive loss over shuffled-free sequential batches, no graph recorded.
double stage1_loss(const model::RoleEncoderPair& pair, std::span<const Example> examples, std::size_t batch_size);

struct Stage1Outcome {
  /// Index 0 is the loss before any update, then one entry per epoch.
  std::vector<double> epoch_loss;
  std::uint64_t updates = 0;
};

/// Contrastive training of one encoder pair on (video, role text) batches.
Stage1Outcome train_stage1(model::RoleEncoderPair& pair, const TrainConfig& cfg, std::span<const Example> examples);

/// Trains the cause and effect pairs and logs both curves into the run directory.
struct Stage1Pair {
  model::RoleEncoderPair cause;
  model::RoleEncoderPair effect;
  Stage1Outcome cause_log;
  Stage1Outcome effect_log;
};
Stage1Pair train_stage1_pair(const model::EncoderConfig& enc, const text::Vocabulary& vocab, const TrainConfig& cfg,
                             std::span<const Example> examples, const RunDirectory* run = nullptr);

struct Stage2Outcome {
  std::vector<EpochMetrics> epochs;
  std::uint64_t updates = 0;
  std::optional<double> best_val_cider;
};

/// Frozen stage-1 loss constants recorded alongside L_caption.
struct FrozenLosses {
  double l_cause = 0.0;
  double l_effect = 0.0;
};

using ValidationFn = std::function<double(const model::Stage2Model&)>;

/// Cross-entropy training of the caption model on precomputed frozen features.
/// Only the stage-2 parameters receive updates.
Stage2Outcome train_stage2(model::Stage2Model& m, const TrainConfig& cfg, std::span<const model::StreamFeatures> feats,
                           std::span<const Example> examples, FrozenLosses frozen, const ValidationFn& validate = {},
                           const RunDirectory* run = nullptr);

struct Prediction {
  std::string video_id;
  std::string caption;
  bool truncated = false;
};

std::vector<Prediction> predict(const model::Stage2Model& m, std::span<const model::StreamFeatures> feats,
                                const model::GenerationOptions& opts = {});

/// Corpus CIDEr (x10 scale) of predictions against combined ground truth.
double corpus_cider(std::span<const Prediction> preds, std::span<const Example> examples);

}  // namespace ctn::train
