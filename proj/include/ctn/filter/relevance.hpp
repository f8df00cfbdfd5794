#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctn/data/dataset.hpp"
#include "ctn/data/video.hpp"
#include "ctn/llm/gateway.hpp"
#include "ctn/model/stage1.hpp"
#include "ctn/nn/tensor.hpp"
#include "ctn/prompt/prompt.hpp"

namespace ctn::filter {

inline constexpr double kDefaultTheta = 0.2;
inline constexpr int kDefaultMaxAttempts = 10;

struct TextEmbedding {
  nn::Tensor tokens;  // n_tokens x d
  nn::Tensor pooled;  // 1 x d
};

/// Embedding function behind the relevance score. Implementations must allow
/// concurrent calls or serialize internally.
class VisionTextBackend {
 public:
  virtual ~VisionTextBackend() = default;
  virtual const std::string& name() const = 0;
  virtual nn::Tensor embed_frames(const data::FrameSequence& frames) const = 0;
  virtual TextEmbedding embed_text(const std::string& text) const = 0;
};

/// Uses a stage-1 encoder pair's video and text towers.
class EncoderVisionTextBackend final : public VisionTextBackend {
 public:
  explicit EncoderVisionTextBackend(std::shared_ptr<const model::RoleEncoderPair> encoder,
                                    std::string name = "cen-encoder");
  const std::string& name() const override { return name_; }
  nn::Tensor embed_frames(const data::FrameSequence& frames) const override;
  TextEmbedding embed_text(const std::string& text) const override;
  int image_size() const { return encoder_->config().image_size; }

 private:
  std::shared_ptr<const model::RoleEncoderPair> encoder_;
  std::string name_;
};

struct EmScoreParts {
  double coarse = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double fine = 0.0;
  double score = 0.0;
};

/// Coarse/fine embedding agreement from raw embeddings (each row L2-normalized here).
EmScoreParts emscore_parts(const nn::Tensor& frame_embeds, const nn::Tensor& token_embeds,
                           const nn::Tensor& pooled_text);
double emscore(const std::string& caption, const data::FrameSequence& frames, const VisionTextBackend& backend);

/// Scores a candidate caption against a video.
class CaptionScorer {
 public:
  virtual ~CaptionScorer() = default;
  virtual double score(const std::string& caption, const data::VideoRecord& video) = 0;
};

/// Emits scripted scores in order, the last repeating.
class ScriptedScorer final : public CaptionScorer {
 public:
  explicit ScriptedScorer(std::vector<double> scores);
  double score(const std::string& caption, const data::VideoRecord& video) override;

 private:
  std::vector<double> scores_;
  std::size_t next_ = 0;
  std::mutex mu_;
};

/// Samples and resizes frames once per video, then computes emscore.
class EmScoreScorer final : public CaptionScorer {
 public:
  EmScoreScorer(std::shared_ptr<const VisionTextBackend> backend, std::shared_ptr<const data::VideoDecoder> decoder,
                int image_size);
  double score(const std::string& caption, const data::VideoRecord& video) override;

 private:
  std::shared_ptr<const VisionTextBackend> backend_;
  std::shared_ptr<const data::VideoDecoder> decoder_;
  int image_size_;
  std::map<std::string, data::FrameSequence> cache_;
  std::mutex mu_;
};

struct Attempt {
  int index = 0;
  std::string raw;
  std::optional<data::CtnCaption> caption;
  std::optional<double> score;
  /// "pass", "below_threshold", or a parse failure code.
  std::string status;
};

struct FilterOutcome {
  std::string video_id;
  std::optional<data::CtnCaption> accepted;
  std::vector<Attempt> attempts;
  bool exhausted = false;

  nlohmann::json to_json() const;
};

struct FilterDeps {
  const prompt::TemplateLibrary* templates = nullptr;
  prompt::TemplateId template_id = prompt::TemplateId::fewshot_v1;
  llm::Gateway* gateway = nullptr;
  /// Backend, temperature, max_tokens and seed for each request; the prompt is filled in.
  /// With a seed, attempt k uses seed + k - 1.
  llm::GenerationRequest request;
  CaptionScorer* scorer = nullptr;
};

/// render -> generate -> parse -> score until score >= theta or max_attempts is spent.
FilterOutcome filter_loop(const data::VideoRecord& video, const data::DescriptiveCaptionSet& caps, double theta,
                          int max_attempts, FilterDeps& deps);

struct Histogram {
  struct Bin {
    double lo;
    double hi;
    std::size_t count;
  };
  std::vector<Bin> bins;
  double theta = kDefaultTheta;
  double fraction_above = 0.0;
  std::size_t total = 0;

  std::string to_csv() const;
};

/// Bins of bin_width over [-1, 1] (the last bin closed) and the fraction of scores >= theta.
Histogram score_histogram(const std::vector<double>& scores, double bin_width, double theta = kDefaultTheta);

}  // namespace ctn::filter
