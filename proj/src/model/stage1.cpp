#include "ctn/model/stage1.hpp"

#include <cmath>

#include "ctn/error.hpp"

namespace ctn::model {

std::string_view to_string(Role r) {
  switch (r) {
    case Role::cause: return "cause";
    case Role::effect: return "effect";
    case Role::combined: return "combined";
  }
  return "cause";
}

Role parse_role(std::string_view s) {
  if (s == "cause") return Role::cause;
  if (s == "effect") return Role::effect;
  if (s == "combined") return Role::combined;
  throw Error(ErrorCode::parse_error, "unknown role '" + std::string(s) + "'");
}

EncoderConfig EncoderConfig::published_text_scale() {
  EncoderConfig c;
  c.width = 512;
  c.heads = 8;
  c.text_layers = 12;
  c.embed_dim = 512;
  c.context_length = 77;
  return c;
}

void EncoderConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
    throw Error(ErrorCode::config_error, "image_size must be a positive multiple of patch_size");
  if (width == 0 || heads == 0 || width % heads != 0)
    throw Error(ErrorCode::config_error, "width must be a positive multiple of heads");
  if (embed_dim == 0) throw Error(ErrorCode::config_error, "embed_dim must be > 0");
  if (context_length < 3) throw Error(ErrorCode::config_error, "context_length must be >= 3");
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"image_size", image_size},         {"patch_size", patch_size},   {"width", width},
          {"heads", heads},                   {"vision_layers", vision_layers}, {"text_layers", text_layers},
          {"embed_dim", embed_dim},           {"context_length", context_length},
          {"init_logit_scale", init_logit_scale}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.image_size = j.value("image_size", c.image_size);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.width = j.value("width", c.width);
  c.heads = j.value("heads", c.heads);
  c.vision_layers = j.value("vision_layers", c.vision_layers);
  c.text_layers = j.value("text_layers", c.text_layers);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.context_length = j.value("context_length", c.context_length);
  c.init_logit_scale = j.value("init_logit_scale", c.init_logit_scale);
  c.validate();
  return c;
}

nn::Tensor pool_video(const nn::Tensor& per_frame) {
  if (per_frame.rows() == 0) throw Error(ErrorCode::empty_input, "no frames to pool");
  return nn::l2_normalize_rows(nn::mean_rows(per_frame), 1e-9);
}

RoleEncoderPair::RoleEncoderPair(Role role, EncoderConfig cfg, text::Vocabulary vocab, std::uint64_t seed)
    : role_(role), cfg_(cfg), vocab_(std::move(vocab)) {
  cfg_.validate();
  nn::Rng rng(seed);
  const std::size_t patches = static_cast<std::size_t>(cfg_.image_size / cfg_.patch_size);
  const std::size_t n_patches = patches * patches;
  const std::size_t patch_dim = static_cast<std::size_t>(cfg_.patch_size * cfg_.patch_size * 3);

  patch_embed_ = nn::Linear(params_, "vision.patch", patch_dim, cfg_.width, rng);
  class_token_ = params_.normal("vision.cls", 1, cfg_.width, nn::kInitStd, rng);
  vision_pos_ = params_.normal("vision.pos", n_patches + 1, cfg_.width, nn::kInitStd, rng);
  for (std::size_t i = 0; i < cfg_.vision_layers; ++i)
    vision_layers_.emplace_back(params_, "vision.layer" + std::to_string(i), cfg_.width, cfg_.heads, rng);
  vision_ln_ = nn::LayerNorm(params_, "vision.ln", cfg_.width);
  vision_proj_ = nn::Linear(params_, "vision.proj", cfg_.width, cfg_.embed_dim, rng, false);

  token_embed_ = params_.normal("text.embed", vocab_.size(), cfg_.width, nn::kInitStd, rng);
  text_pos_ = params_.normal("text.pos", cfg_.context_length, cfg_.width, nn::kInitStd, rng);
  for (std::size_t i = 0; i < cfg_.text_layers; ++i)
    text_layers_.emplace_back(params_, "text.layer" + std::to_string(i), cfg_.width, cfg_.heads, rng);
  text_ln_ = nn::LayerNorm(params_, "text.ln", cfg_.width);
  text_proj_ = nn::Linear(params_, "text.proj", cfg_.width, cfg_.embed_dim, rng, false);

  logit_scale_ = params_.constant("logit_scale", 1, 1, cfg_.init_logit_scale);
}

nn::Tensor RoleEncoderPair::vision_forward(const data::Image& img) const {
  if (img.width != cfg_.image_size || img.height != cfg_.image_size)
    throw Error(ErrorCode::resolution_mismatch, "frame is " + std::to_string(img.width) + "x" +
                                                    std::to_string(img.height) + ", encoder expects " +
                                                    std::to_string(cfg_.image_size));
  const int p = cfg_.patch_size;
  const int per_side = cfg_.image_size / p;
  const std::size_t patch_dim = static_cast<std::size_t>(p * p * 3);
  std::vector<double> patches(static_cast<std::size_t>(per_side * per_side) * patch_dim);
  std::size_t k = 0;
  for (int py = 0; py < per_side; ++py)
    for (int px = 0; px < per_side; ++px)
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
          for (int c = 0; c < 3; ++c) patches[k++] = (img.at(py * p + y, px * p + x, c) - 0.5) / 0.5;
  const nn::Tensor tokens = patch_embed_(
      nn::Tensor::from(static_cast<std::size_t>(per_side * per_side), patch_dim, std::move(patches)));
  const nn::Tensor parts[] = {class_token_, tokens};
  nn::Tensor h = nn::add(nn::concat_rows(parts), vision_pos_);
  for (const auto& layer : vision_layers_) h = layer(h);
  return vision_proj_(vision_ln_(nn::slice_rows(h, 0, 1)));
}

nn::Tensor RoleEncoderPair::frame_features(const data::FrameSequence& f) const {
  if (f.frames.empty()) throw Error(ErrorCode::empty_input, f.video_id + ": no frames");
  std::vector<nn::Tensor> rows;
  rows.reserve(f.frames.size());
  for (const auto& img : f.frames) rows.push_back(vision_forward(img));
  return rows.size() == 1 ? rows.front() : nn::concat_rows(rows);
}

nn::Tensor RoleEncoderPair::embed_video(const data::FrameSequence& f) const { return pool_video(frame_features(f)); }

std::vector<std::size_t> RoleEncoderPair::text_ids(std::string_view text, bool* truncated) const {
  std::vector<std::size_t> content = vocab_.encode(text);
  if (content.empty()) throw Error(ErrorCode::empty_input, "text has no tokens");
  const std::size_t room = cfg_.context_length - 2;
  const bool cut = content.size() > room;
  if (cut) content.resize(room);
  if (truncated) *truncated = cut;
  std::vector<std::size_t> ids;
  ids.reserve(content.size() + 2);
  ids.push_back(text::Vocabulary::kBos);
  ids.insert(ids.end(), content.begin(), content.end());
  ids.push_back(text::Vocabulary::kEos);
  return ids;
}

TextEncoding RoleEncoderPair::encode_text(std::string_view text) const {
  TextEncoding out;
  const auto ids = text_ids(text, &out.truncated);
  nn::Tensor h = nn::add(nn::gather_rows(token_embed_, ids), nn::slice_rows(text_pos_, 0, ids.size()));
  for (const auto& layer : text_layers_) h = layer(h, true);
  const nn::Tensor projected = text_proj_(text_ln_(h));
  out.tokens = nn::slice_rows(projected, 1, ids.size() - 1);
  out.pooled = nn::l2_normalize_rows(nn::slice_rows(projected, ids.size() - 1, ids.size()), 1e-9);
  return out;
}

nn::Tensor RoleEncoderPair::embed_text(std::string_view text, bool* truncated) const {
  auto enc = encode_text(text);
  if (truncated) *truncated = enc.truncated;
  return enc.pooled;
}

nn::Tensor RoleEncoderPair::scale_tensor() const { return nn::exp(logit_scale_); }

double RoleEncoderPair::scale_value() const { return std::exp(logit_scale_.item()); }

void RoleEncoderPair::clamp_logit_scale() {
  auto v = logit_scale_.node()->value.data();
  v[0] = std::min(v[0], std::log(kMaxLogitScale));
}

nn::Checkpoint RoleEncoderPair::to_checkpoint(std::uint64_t step) const {
  nlohmann::json meta{{"kind", "stage1"},
                      {"role", to_string(role_)},
                      {"d", cfg_.embed_dim},
                      {"step", step},
                      {"config", cfg_.to_json()},
                      {"vocab", vocab_.to_json()}};
  return nn::Checkpoint::from_store(params_, std::move(meta));
}

RoleEncoderPair RoleEncoderPair::from_checkpoint(const nn::Checkpoint& ckpt) {
  const auto& m = ckpt.metadata;
  if (m.value("kind", "") != "stage1") throw Error(ErrorCode::parse_error, "not a stage-1 checkpoint");
  RoleEncoderPair pair(parse_role(m.at("role").get<std::string>()), EncoderConfig::from_json(m.at("config")),
                       text::Vocabulary::from_json(m.at("vocab")), 0);
  ckpt.restore_into(pair.params_);
  return pair;
}

void RoleEncoderPair::save(const std::filesystem::path& path, std::uint64_t step) const {
  to_checkpoint(step).save(path);
}

RoleEncoderPair RoleEncoderPair::load(const std::filesystem::path& path) {
  return from_checkpoint(nn::Checkpoint::load(path));
}

}  // namespace ctn::model
