#include "ctn/model/stage2.hpp"

#include <algorithm>
#include <cmath>

#include "ctn/error.hpp"

namespace ctn::model {

std::string_view to_string(StreamWiring w) {
  switch (w) {
    case StreamWiring::both: return "both";
    case StreamWiring::cause_only: return "cause_only";
    case StreamWiring::effect_only: return "effect_only";
  }
  return "both";
}

StreamWiring parse_wiring(std::string_view s) {
  if (s == "both") return StreamWiring::both;
  if (s == "cause_only") return StreamWiring::cause_only;
  if (s == "effect_only") return StreamWiring::effect_only;
  throw Error(ErrorCode::parse_error, "unknown stream wiring '" + std::string(s) + "'");
}

void Stage2Config::validate() const {
  if (d_model == 0 || heads == 0 || d_model % heads != 0)
    throw Error(ErrorCode::config_error, "d_model must be a positive multiple of heads");
  if (max_len < 2) throw Error(ErrorCode::config_error, "max_len must be >= 2");
  if (max_frames == 0) throw Error(ErrorCode::config_error, "max_frames must be >= 1");
}

nlohmann::json Stage2Config::to_json() const {
  return {{"d_model", d_model},   {"heads", heads},     {"encoder_layers", encoder_layers},
          {"decoder_layers", decoder_layers}, {"max_len", max_len}, {"max_frames", max_frames}};
}

Stage2Config Stage2Config::from_json(const nlohmann::json& j) {
  Stage2Config c;
  c.d_model = j.value("d_model", c.d_model);
  c.heads = j.value("heads", c.heads);
  c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  c.max_len = j.value("max_len", c.max_len);
  c.max_frames = j.value("max_frames", c.max_frames);
  c.validate();
  return c;
}

StreamFeatures extract_features(const data::FrameSequence& frames, const RoleEncoderPair& cause_enc,
                                const RoleEncoderPair& effect_enc, bool check_roles) {
  if (check_roles) {
    if (cause_enc.role() != Role::cause)
      throw Error(ErrorCode::role_mismatch, std::string(to_string(cause_enc.role())) + " encoder in cause slot");
    if (effect_enc.role() != Role::effect)
      throw Error(ErrorCode::role_mismatch, std::string(to_string(effect_enc.role())) + " encoder in effect slot");
  }
  nn::NoGradGuard guard;
  StreamFeatures f;
  f.video_id = frames.video_id;
  f.cause = cause_enc.frame_features(frames).detach();
  f.effect = &cause_enc == &effect_enc ? f.cause : effect_enc.frame_features(frames).detach();
  return f;
}

Stage2Model::Stage2Model(Stage2Config cfg, std::size_t feature_dim, text::Vocabulary vocab, StreamWiring wiring,
                         std::uint64_t seed)
    : cfg_(cfg), feature_dim_(feature_dim), vocab_(std::move(vocab)), wiring_(wiring) {
  cfg_.validate();
  if (feature_dim_ == 0) throw Error(ErrorCode::config_error, "feature_dim must be > 0");
  nn::Rng rng(seed);
  if (wiring_ != StreamWiring::effect_only) {
    in_cause_ = nn::Linear(params_, "enc_cause.in", feature_dim_, cfg_.d_model, rng);
    for (std::size_t i = 0; i < cfg_.encoder_layers; ++i)
      enc_cause_.emplace_back(params_, "enc_cause.layer" + std::to_string(i), cfg_.d_model, cfg_.heads, rng);
  }
  if (wiring_ != StreamWiring::cause_only) {
    in_effect_ = nn::Linear(params_, "enc_effect.in", feature_dim_, cfg_.d_model, rng);
    for (std::size_t i = 0; i < cfg_.encoder_layers; ++i)
      enc_effect_.emplace_back(params_, "enc_effect.layer" + std::to_string(i), cfg_.d_model, cfg_.heads, rng);
  }
  token_embed_ = params_.normal("dec.embed", vocab_.size(), cfg_.d_model, nn::kInitStd, rng);
  for (std::size_t i = 0; i < cfg_.decoder_layers; ++i)
    decoder_.emplace_back(params_, "dec.layer" + std::to_string(i), cfg_.d_model, cfg_.heads, rng);
  out_ln_ = nn::LayerNorm(params_, "dec.ln", cfg_.d_model);
  out_proj_ = nn::Linear(params_, "dec.out", cfg_.d_model, vocab_.size(), rng);
}

nn::Tensor Stage2Model::encode(const nn::Tensor& f, const nn::Linear& proj,
                               const std::vector<nn::EncoderLayer>& layers) const {
  if (!f.defined() || f.rows() == 0) throw Error(ErrorCode::empty_stream, "feature stream has no frames");
  if (f.cols() != feature_dim_)
    throw Error(ErrorCode::dimension_mismatch, "features have dim " + std::to_string(f.cols()) + ", expected " +
                                                   std::to_string(feature_dim_));
  if (f.rows() > cfg_.max_frames)
    throw Error(ErrorCode::invariant_violation, "stream longer than max_frames");
  nn::Tensor h = nn::add(proj(f), nn::sinusoidal_positions(f.rows(), cfg_.d_model));
  for (const auto& layer : layers) h = layer(h);
  return h;
}

StageTwoState Stage2Model::encode_streams(const nn::Tensor& f_cause, const nn::Tensor& f_effect) const {
  if (wiring_ != StreamWiring::both) throw Error(ErrorCode::invariant_violation, "model has a single stream");
  StageTwoState s;
  s.h_cause = encode(f_cause, in_cause_, enc_cause_);
  s.h_effect = encode(f_effect, in_effect_, enc_effect_);
  const nn::Tensor parts[] = {s.h_cause, s.h_effect};
  s.h_concat = nn::concat_rows(parts);
  return s;
}

nn::Tensor Stage2Model::memory(const StreamFeatures& f) const {
  switch (wiring_) {
    case StreamWiring::both: return encode_streams(f.cause, f.effect).h_concat;
    case StreamWiring::cause_only: return encode(f.cause, in_cause_, enc_cause_);
    case StreamWiring::effect_only: return encode(f.effect, in_effect_, enc_effect_);
  }
  return {};
}

nn::Tensor Stage2Model::decoder_logits(const nn::Tensor& memory, std::span<const std::size_t> prefix) const {
  if (prefix.empty() || prefix.front() != text::Vocabulary::kBos)
    throw Error(ErrorCode::invariant_violation, "decoder prefix must start with BOS");
  if (prefix.size() > cfg_.max_len) throw Error(ErrorCode::invariant_violation, "prefix longer than max_len");
  if (memory.cols() != cfg_.d_model) throw Error(ErrorCode::dimension_mismatch, "memory width != d_model");
  nn::Tensor h = nn::add(nn::gather_rows(token_embed_, prefix), nn::sinusoidal_positions(prefix.size(), cfg_.d_model));
  for (const auto& layer : decoder_) h = layer(h, memory);
  return out_proj_(out_ln_(h));
}

std::vector<double> Stage2Model::decode_step(const nn::Tensor& memory, std::span<const std::size_t> prefix) const {
  nn::NoGradGuard guard;
  const nn::Tensor logits = decoder_logits(memory, prefix);
  const nn::Tensor last = nn::softmax_rows(nn::slice_rows(logits, prefix.size() - 1, prefix.size()));
  return {last.values().begin(), last.values().end()};
}

std::vector<std::size_t> Stage2Model::target_ids(std::string_view caption) const {
  auto ids = vocab_.encode(caption);
  if (ids.empty()) throw Error(ErrorCode::empty_input, "caption has no tokens");
  if (ids.size() + 2 > cfg_.max_len)
    throw Error(ErrorCode::out_of_vocabulary, "caption of " + std::to_string(ids.size()) +
                                                  " tokens exceeds max_len " + std::to_string(cfg_.max_len));
  return ids;
}

nn::Tensor Stage2Model::caption_loss(const nn::Tensor& memory, std::string_view caption) const {
  const auto ids = target_ids(caption);
  std::vector<std::size_t> input{text::Vocabulary::kBos};
  input.insert(input.end(), ids.begin(), ids.end());
  std::vector<std::size_t> targets(ids);
  targets.push_back(text::Vocabulary::kEos);
  return nn::cross_entropy(decoder_logits(memory, input), targets, text::Vocabulary::kPad);
}

GeneratedCaption Stage2Model::generate(const nn::Tensor& memory, const GenerationOptions& opts) const {
  const std::size_t max_len = opts.max_len ? opts.max_len : cfg_.max_len;
  if (max_len < 2) throw Error(ErrorCode::invariant_violation, "max_len must be >= 2");
  if (max_len > cfg_.max_len) throw Error(ErrorCode::invariant_violation, "max_len exceeds the model's limit");
  nn::NoGradGuard guard;
  GeneratedCaption out = opts.strategy == DecodeStrategy::beam && opts.beam_width > 1
                             ? beam(memory, max_len, opts.beam_width)
                             : greedy(memory, max_len);
  out.text = vocab_.decode(out.ids);
  return out;
}

GeneratedCaption Stage2Model::greedy(const nn::Tensor& memory, std::size_t max_len) const {
  GeneratedCaption out;
  std::vector<std::size_t> prefix{text::Vocabulary::kBos};
  for (;;) {
    const auto p = decode_step(memory, prefix);
    const auto next = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    if (next == text::Vocabulary::kEos) return out;
    if (out.ids.size() + 2 >= max_len) break;
    out.ids.push_back(next);
    prefix.push_back(next);
  }
  out.truncated = true;
  return out;
}

GeneratedCaption Stage2Model::beam(const nn::Tensor& memory, std::size_t max_len, std::size_t width) const {
  struct Hyp {
    std::vector<std::size_t> ids;
    double score;
  };
  enum class Kind { alive, done, cut };
  std::vector<Hyp> alive{{{}, 0.0}};
  std::optional<Hyp> best_done, best_cut;
  while (!alive.empty()) {
    if (best_done && best_done->score >= alive.front().score) break;
    std::vector<std::pair<Hyp, Kind>> cands;
    for (const auto& h : alive) {
      std::vector<std::size_t> prefix{text::Vocabulary::kBos};
      prefix.insert(prefix.end(), h.ids.begin(), h.ids.end());
      const auto p = decode_step(memory, prefix);
      const bool full = h.ids.size() + 2 >= max_len;
      for (std::size_t t = 0; t < p.size(); ++t) {
        const double s = h.score + std::log(std::max(p[t], 1e-300));
        if (t == text::Vocabulary::kEos) {
          cands.push_back({{h.ids, s}, Kind::done});
        } else if (full) {
          // no room for another content token: the hypothesis ends truncated
          cands.push_back({{h.ids, s}, Kind::cut});
        } else {
          auto ids = h.ids;
          ids.push_back(t);
          cands.push_back({{std::move(ids), s}, Kind::alive});
        }
      }
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const auto& a, const auto& b) { return a.first.score > b.first.score; });
    alive.clear();
    for (std::size_t i = 0; i < std::min(width, cands.size()); ++i) {
      auto& [h, kind] = cands[i];
      if (kind == Kind::done) {
        if (!best_done || h.score > best_done->score) best_done = h;
      } else if (kind == Kind::cut) {
        if (!best_cut || h.score > best_cut->score) best_cut = h;
      } else {
        alive.push_back(std::move(h));
      }
    }
  }
  GeneratedCaption out;
  if (best_done && (!best_cut || best_done->score >= best_cut->score)) {
    out.ids = best_done->ids;
  } else if (best_cut) {
    out.ids = best_cut->ids;
    out.truncated = true;
  } else {
    out.ids = alive.front().ids;
    out.truncated = true;
  }
  return out;
}

nn::Checkpoint Stage2Model::to_checkpoint(std::uint64_t step) const {
  nlohmann::json meta{{"kind", "stage2"},
                      {"step", step},
                      {"config", cfg_.to_json()},
                      {"feature_dim", feature_dim_},
                      {"wiring", to_string(wiring_)},
                      {"vocab", vocab_.to_json()}};
  return nn::Checkpoint::from_store(params_, std::move(meta));
}

Stage2Model Stage2Model::from_checkpoint(const nn::Checkpoint& ckpt) {
  const auto& m = ckpt.metadata;
  if (m.value("kind", "") != "stage2") throw Error(ErrorCode::parse_error, "not a stage-2 checkpoint");
  Stage2Model model(Stage2Config::from_json(m.at("config")), m.at("feature_dim").get<std::size_t>(),
                    text::Vocabulary::from_json(m.at("vocab")), parse_wiring(m.at("wiring").get<std::string>()), 0);
  ckpt.restore_into(model.params_);
  return model;
}

void Stage2Model::save(const std::filesystem::path& path, std::uint64_t step) const { to_checkpoint(step).save(path); }

Stage2Model Stage2Model::load(const std::filesystem::path& path) { return from_checkpoint(nn::Checkpoint::load(path)); }

CaptionLossResult caption_loss(const nn::Tensor& probs, const nn::Tensor& onehot) {
  if (probs.rows() != onehot.rows() || probs.cols() != onehot.cols())
    throw Error(ErrorCode::dimension_mismatch, "probabilities and targets differ in shape");
  CaptionLossResult r;
  double acc = 0.0;
  for (std::size_t t = 0; t < probs.rows(); ++t) {
    double row_mass = 0.0;
    double term = 0.0;
    for (std::size_t c = 0; c < probs.cols(); ++c) {
      const double y = onehot.at(t, c);
      if (y == 0.0) continue;
      row_mass += y;
      double p = probs.at(t, c);
      if (p < kLogEpsilon) {
        p = kLogEpsilon;
        r.clamped = true;
      }
      term -= y * std::log(p);
    }
    if (row_mass == 0.0) continue;  // padding
    acc += term;
    ++r.steps;
  }
  r.loss = r.steps ? acc / static_cast<double>(r.steps) : 0.0;
  return r;
}

double total_loss(double l_cause, double l_effect, double l_caption) {
  if (!std::isfinite(l_cause) || !std::isfinite(l_effect) || !std::isfinite(l_caption))
    throw Error(ErrorCode::non_finite, "loss term is not finite");
  return l_cause + l_effect + l_caption;
}

}  // namespace ctn::model
