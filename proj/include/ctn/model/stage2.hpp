#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctn/model/stage1.hpp"
#include "ctn/nn/layers.hpp"
#include "ctn/text/tokenizer.hpp"

namespace ctn::model {

/// Which encoded streams the decoder attends to.
enum class StreamWiring { both, cause_only, effect_only };

std::string_view to_string(StreamWiring w);
StreamWiring parse_wiring(std::string_view s);

struct Stage2Config {
  std::size_t d_model = 32;
  std::size_t heads = 4;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t max_len = 24;  // including BOS and EOS
  std::size_t max_frames = 20;

  void validate() const;
  nlohmann::json to_json() const;
  static Stage2Config from_json(const nlohmann::json& j);
};

/// Frozen per-frame features of one video from the cause and effect encoders.
struct StreamFeatures {
  std::string video_id;
  nn::Tensor cause;   // n_frames x d
  nn::Tensor effect;  // n_frames x d
};

/// Runs both stage-1 video towers on the same frames without recording a graph.
/// With check_roles, the slots must hold a cause and an effect encoder respectively.
StreamFeatures extract_features(const data::FrameSequence& frames, const RoleEncoderPair& cause_enc,
                                const RoleEncoderPair& effect_enc, bool check_roles = true);

struct StageTwoState {
  nn::Tensor h_cause;
  nn::Tensor h_effect;
  nn::Tensor h_concat;
};

enum class DecodeStrategy { greedy, beam };

struct GenerationOptions {
  DecodeStrategy strategy = DecodeStrategy::greedy;
  std::size_t beam_width = 3;
  /// 0 uses the model's configured max_len.
  std::size_t max_len = 0;
};

struct GeneratedCaption {
  std::vector<std::size_t> ids;  // BOS/EOS excluded
  std::string text;
  bool truncated = false;
};

class Stage2Model {
 public:
  Stage2Model(Stage2Config cfg, std::size_t feature_dim, text::Vocabulary vocab, StreamWiring wiring,
              std::uint64_t seed);

  const Stage2Config& config() const { return cfg_; }
  const text::Vocabulary& vocab() const { return vocab_; }
  StreamWiring wiring() const { return wiring_; }
  std::size_t feature_dim() const { return feature_dim_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  /// Both encoders applied; h_concat = [h_cause; h_effect]. Requires wiring == both.
  StageTwoState encode_streams(const nn::Tensor& f_cause, const nn::Tensor& f_effect) const;
  /// The sequence the decoder cross-attends to under this model's wiring.
  nn::Tensor memory(const StreamFeatures& f) const;

  /// Logits for every prefix position, prefix.size() x |V|.
  nn::Tensor decoder_logits(const nn::Tensor& memory, std::span<const std::size_t> prefix) const;
  /// Next-token distribution after prefix (which must start with BOS).
  std::vector<double> decode_step(const nn::Tensor& memory, std::span<const std::size_t> prefix) const;

  /// Teacher-forced cross entropy averaged over the caption's tokens (and EOS).
  nn::Tensor caption_loss(const nn::Tensor& memory, std::string_view caption) const;
  std::vector<std::size_t> target_ids(std::string_view caption) const;

  GeneratedCaption generate(const nn::Tensor& memory, const GenerationOptions& opts = {}) const;

  nn::Checkpoint to_checkpoint(std::uint64_t step) const;
  static Stage2Model from_checkpoint(const nn::Checkpoint& ckpt);
  void save(const std::filesystem::path& path, std::uint64_t step) const;
  static Stage2Model load(const std::filesystem::path& path);

 private:
  nn::Tensor encode(const nn::Tensor& f, const nn::Linear& proj, const std::vector<nn::EncoderLayer>& layers) const;
  GeneratedCaption greedy(const nn::Tensor& memory, std::size_t max_len) const;
  GeneratedCaption beam(const nn::Tensor& memory, std::size_t max_len, std::size_t width) const;

  Stage2Config cfg_;
  std::size_t feature_dim_;
  text::Vocabulary vocab_;
  StreamWiring wiring_;
  nn::ParamStore params_;

  nn::Linear in_cause_, in_effect_;
  std::vector<nn::EncoderLayer> enc_cause_, enc_effect_;
  nn::Tensor token_embed_;
  std::vector<nn::DecoderLayer> decoder_;
  nn::LayerNorm out_ln_;
  nn::Linear out_proj_;
};

struct CaptionLossResult {
  double loss = 0.0;
  /// Set when some target probability fell below the log epsilon.
  bool clamped = false;
  std::size_t steps = 0;
};

inline constexpr double kLogEpsilon = 1e-9;

/// -(1/T) sum_t sum_c y[t,c] log p[t,c] over T x |V| probabilities; all-zero target rows are padding and skipped.
CaptionLossResult caption_loss(const nn::Tensor& probs, const nn::Tensor& onehot);

/// L_cause + L_effect + L_caption; throws non_finite.
double total_loss(double l_cause, double l_effect, double l_caption);

}  // namespace ctn::model
