#include "ctn/filter/relevance.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ctn/error.hpp"
#include "ctn/kernels/kernels.hpp"
#include "ctn/nn/ops.hpp"

namespace ctn::filter {

EncoderVisionTextBackend::EncoderVisionTextBackend(std::shared_ptr<const model::RoleEncoderPair> encoder,
                                                   std::string name)
    : encoder_(std::move(encoder)), name_(std::move(name)) {}

nn::Tensor EncoderVisionTextBackend::embed_frames(const data::FrameSequence& frames) const {
  nn::NoGradGuard guard;
  return encoder_->frame_features(frames).detach();
}

TextEmbedding EncoderVisionTextBackend::embed_text(const std::string& text) const {
  nn::NoGradGuard guard;
  auto enc = encoder_->encode_text(text);
  return {enc.tokens.detach(), enc.pooled.detach()};
}

EmScoreParts emscore_parts(const nn::Tensor& frame_embeds, const nn::Tensor& token_embeds,
                           const nn::Tensor& pooled_text) {
  if (frame_embeds.rows() == 0) throw Error(ErrorCode::empty_input, "no frame embeddings");
  if (token_embeds.rows() == 0) throw Error(ErrorCode::empty_input, "no token embeddings");
  const std::size_t d = frame_embeds.cols();
  if (token_embeds.cols() != d || pooled_text.cols() != d || pooled_text.rows() != 1)
    throw Error(ErrorCode::dimension_mismatch, "frame/text embedding dims differ");

  nn::NoGradGuard guard;
  const nn::Tensor frames = nn::l2_normalize_rows(frame_embeds, 1e-12);
  const nn::Tensor tokens = nn::l2_normalize_rows(token_embeds, 1e-12);
  const nn::Tensor pooled = nn::l2_normalize_rows(pooled_text, 1e-12);
  const nn::Tensor video = nn::l2_normalize_rows(nn::mean_rows(frames), 1e-12);
  const auto& k = kernels::active();

  EmScoreParts p;
  p.coarse = k.dot(video.row(0).data(), pooled.row(0).data(), d);

  const std::size_t nf = frames.rows(), nt = tokens.rows();
  std::vector<double> sim(nt * nf);
  for (std::size_t t = 0; t < nt; ++t)
    for (std::size_t f = 0; f < nf; ++f) sim[t * nf + f] = k.dot(tokens.row(t).data(), frames.row(f).data(), d);
  for (std::size_t t = 0; t < nt; ++t)
    p.precision += *std::max_element(sim.begin() + static_cast<std::ptrdiff_t>(t * nf),
                                     sim.begin() + static_cast<std::ptrdiff_t>((t + 1) * nf));
  p.precision /= static_cast<double>(nt);
  for (std::size_t f = 0; f < nf; ++f) {
    double best = -INFINITY;
    for (std::size_t t = 0; t < nt; ++t) best = std::max(best, sim[t * nf + f]);
    p.recall += best;
  }
  p.recall /= static_cast<double>(nf);
  const double denom = p.precision + p.recall;
  p.fine = denom == 0.0 ? 0.0 : 2.0 * p.precision * p.recall / denom;
  p.fine = std::clamp(p.fine, -1.0, 1.0);
  p.score = std::clamp(0.5 * (p.coarse + p.fine), -1.0, 1.0);
  return p;
}

double emscore(const std::string& caption, const data::FrameSequence& frames, const VisionTextBackend& backend) {
  if (frames.frames.empty()) throw Error(ErrorCode::empty_input, frames.video_id + ": no frames");
  if (text::trim(caption).empty()) throw Error(ErrorCode::empty_input, "empty caption");
  const auto text = backend.embed_text(caption);
  return emscore_parts(backend.embed_frames(frames), text.tokens, text.pooled).score;
}

ScriptedScorer::ScriptedScorer(std::vector<double> scores) : scores_(std::move(scores)) {
  if (scores_.empty()) throw Error(ErrorCode::empty_input, "scripted scorer needs scores");
}

double ScriptedScorer::score(const std::string&, const data::VideoRecord&) {
  std::lock_guard lock(mu_);
  const double s = scores_[std::min(next_, scores_.size() - 1)];
  ++next_;
  return s;
}

EmScoreScorer::EmScoreScorer(std::shared_ptr<const VisionTextBackend> backend,
                             std::shared_ptr<const data::VideoDecoder> decoder, int image_size)
    : backend_(std::move(backend)), decoder_(std::move(decoder)), image_size_(image_size) {}

double EmScoreScorer::score(const std::string& caption, const data::VideoRecord& video) {
  const data::FrameSequence* frames = nullptr;
  {
    std::lock_guard lock(mu_);
    auto it = cache_.find(video.video_id);
    if (it == cache_.end())
      it = cache_.emplace(video.video_id, data::resize_frames(data::sample_frames(video, *decoder_), image_size_)).first;
    frames = &it->second;
  }
  return emscore(caption, *frames, *backend_);
}

nlohmann::json FilterOutcome::to_json() const {
  nlohmann::json attempts_json = nlohmann::json::array();
  for (const auto& a : attempts) {
    nlohmann::json j{{"attempt", a.index}, {"status", a.status}, {"raw", a.raw}};
    if (a.caption) j["caption"] = {{"Cause", a.caption->cause}, {"Effect", a.caption->effect}};
    if (a.score) j["score"] = *a.score;
    attempts_json.push_back(std::move(j));
  }
  nlohmann::json j{{"video_id", video_id}, {"exhausted", exhausted}, {"attempts", attempts_json}};
  if (accepted) j["accepted"] = data::ctn_to_json(*accepted);
  else j["accepted"] = nullptr;
  return j;
}

FilterOutcome filter_loop(const data::VideoRecord& video, const data::DescriptiveCaptionSet& caps, double theta,
                          int max_attempts, FilterDeps& deps) {
  if (!(theta > -1.0 && theta < 1.0)) throw Error(ErrorCode::invariant_violation, "theta must be in (-1, 1)");
  if (max_attempts < 1) throw Error(ErrorCode::invariant_violation, "max_attempts must be >= 1");
  if (!deps.templates || !deps.gateway || !deps.scorer)
    throw Error(ErrorCode::config_error, "filter_loop needs templates, gateway and scorer");

  FilterOutcome out;
  out.video_id = video.video_id;
  const std::string rendered = deps.templates->render(deps.template_id, caps);
  for (int k = 1; k <= max_attempts; ++k) {
    llm::GenerationRequest req = deps.request;
    req.prompt = rendered;
    if (deps.request.seed) req.seed = *deps.request.seed + static_cast<std::uint64_t>(k - 1);
    const auto result = deps.gateway->generate(req);

    Attempt a;
    a.index = k;
    a.raw = result.text;
    auto parsed = prompt::parse_response(result.text, video.video_id);
    if (!parsed.ok()) {
      a.status = std::string(prompt::to_string(*parsed.failure));
      out.attempts.push_back(std::move(a));
      continue;
    }
    a.caption = parsed.ctn;
    const double s = deps.scorer->score(data::combine_caption(*parsed.ctn), video);
    a.score = s;
    const bool pass = s >= theta;
    a.status = pass ? "pass" : "below_threshold";
    out.attempts.push_back(a);
    if (pass) {
      data::CtnCaption c = *parsed.ctn;
      c.emscore = s;
      c.attempts = k;
      out.accepted = std::move(c);
      return out;
    }
  }
  out.exhausted = true;
  return out;
}

std::string Histogram::to_csv() const {
  std::ostringstream os;
  os << "bin_lo,bin_hi,count\n";
  os.precision(6);
  for (const auto& b : bins) os << b.lo << ',' << b.hi << ',' << b.count << '\n';
  return os.str();
}

Histogram score_histogram(const std::vector<double>& scores, double bin_width, double theta) {
  if (!(bin_width > 0.0)) throw Error(ErrorCode::invariant_violation, "bin_width must be > 0");
  if (scores.empty()) throw Error(ErrorCode::empty_input, "no scores to histogram");
  Histogram h;
  h.theta = theta;
  h.total = scores.size();
  const auto nbins = static_cast<std::size_t>(std::ceil(2.0 / bin_width - 1e-9));
  for (std::size_t i = 0; i < nbins; ++i)
    h.bins.push_back({-1.0 + static_cast<double>(i) * bin_width,
                      std::min(1.0, -1.0 + static_cast<double>(i + 1) * bin_width), 0});
  std::size_t above = 0;
  for (double s : scores) {
    if (s >= theta) ++above;
    const double c = std::clamp(s, -1.0, 1.0);
    auto idx = static_cast<std::size_t>(std::floor((c + 1.0) / bin_width));
    h.bins[std::min(idx, nbins - 1)].count++;
  }
  h.fraction_above = static_cast<double>(above) / static_cast<double>(scores.size());
  return h;
}

}  // namespace ctn::filter
