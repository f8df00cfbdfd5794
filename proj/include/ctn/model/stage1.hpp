#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ctn/data/video.hpp"
#include "ctn/nn/layers.hpp"
#include "ctn/text/tokenizer.hpp"

namespace ctn::model {

/// combined is the single encoder pair trained on whole captions (e_combined ablation).
enum class Role { cause, effect, combined };

std::string_view to_string(Role r);
Role parse_role(std::string_view s);

struct EncoderConfig {
  int image_size = 16;
  int patch_size = 4;
  std::size_t width = 32;
  std::size_t heads = 4;
  std::size_t vision_layers = 2;
  std::size_t text_layers = 2;
  /// Shared video/text output dimension d.
  std::size_t embed_dim = 16;
  std::size_t context_length = 32;
  double init_logit_scale = 2.659260036932778;  // ln(1 / 0.07)

  /// Text tower at the published size: 12 layers, width 512, 8 heads.
  static EncoderConfig published_text_scale();

  void validate() const;
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

/// Upper bound applied to exp(logit_scale).
inline constexpr double kMaxLogitScale = 100.0;

struct TextEncoding {
  /// Content-token states projected to d (BOS/EOS excluded), unnormalized.
  nn::Tensor tokens;
  /// EOS state projected to d and L2-normalized, 1 x d.
  nn::Tensor pooled;
  bool truncated = false;
};

/// Mean over frames then L2 normalization; throws degenerate_embedding on a zero mean.
nn::Tensor pool_video(const nn::Tensor& per_frame);

/// Video tower (patch transformer with a class token) and text tower (causal
/// transformer read out at EOS) for one role, plus a learnable log temperature.
class RoleEncoderPair {
 public:
  RoleEncoderPair(Role role, EncoderConfig cfg, text::Vocabulary vocab, std::uint64_t seed);

  Role role() const { return role_; }
  const EncoderConfig& config() const { return cfg_; }
  const text::Vocabulary& vocab() const { return vocab_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  /// Per-frame projected features, n_frames x d. Frames must be image_size square.
  nn::Tensor frame_features(const data::FrameSequence& f) const;
  nn::Tensor embed_video(const data::FrameSequence& f) const;
  TextEncoding encode_text(std::string_view text) const;
  nn::Tensor embed_text(std::string_view text, bool* truncated = nullptr) const;

  /// 1x1 learnable log scale; the softmax multiplier is exp(.) capped at kMaxLogitScale.
  const nn::Tensor& logit_scale() const { return logit_scale_; }
  nn::Tensor scale_tensor() const;
  double scale_value() const;
  void clamp_logit_scale();

  /// Ids fed to the text tower: BOS, content (truncated to fit), EOS.
  std::vector<std::size_t> text_ids(std::string_view text, bool* truncated = nullptr) const;

  nn::Checkpoint to_checkpoint(std::uint64_t step) const;
  static RoleEncoderPair from_checkpoint(const nn::Checkpoint& ckpt);
  void save(const std::filesystem::path& path, std::uint64_t step) const;
  static RoleEncoderPair load(const std::filesystem::path& path);

 private:
  nn::Tensor vision_forward(const data::Image& img) const;

  Role role_;
  EncoderConfig cfg_;
  text::Vocabulary vocab_;
  nn::ParamStore params_;

  nn::Linear patch_embed_;
  nn::Tensor class_token_;
  nn::Tensor vision_pos_;
  std::vector<nn::EncoderLayer> vision_layers_;
  nn::LayerNorm vision_ln_;
  nn::Linear vision_proj_;

  nn::Tensor token_embed_;
  nn::Tensor text_pos_;
  std::vector<nn::EncoderLayer> text_layers_;
  nn::LayerNorm text_ln_;
  nn::Linear text_proj_;

  nn::Tensor logit_scale_;
};

}  // namespace ctn::model
