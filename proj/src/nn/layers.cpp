#include "ctn/nn/layers.hpp"

#include <cmath>

#include "ctn/error.hpp"

namespace ctn::nn {

Linear::Linear(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool bias)
    : weight_(ps.normal(name + ".weight", in, out, kInitStd, rng)) {
  if (bias) bias_ = ps.constant(name + ".bias", 1, out, 0.0);
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, weight_);
  return bias_.defined() ? add_row(y, bias_) : y;
}

LayerNorm::LayerNorm(ParamStore& ps, const std::string& name, std::size_t dim)
    : gamma_(ps.constant(name + ".gamma", 1, dim, 1.0)), beta_(ps.constant(name + ".beta", 1, dim, 0.0)) {}

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm(x, gamma_, beta_); }

MultiHeadAttention::MultiHeadAttention(ParamStore& ps, const std::string& name, std::size_t width,
                                       std::size_t heads, Rng& rng)
    : heads_(heads),
      width_(width),
      q_(ps, name + ".q", width, width, rng),
      k_(ps, name + ".k", width, width, rng),
      v_(ps, name + ".v", width, width, rng),
      o_(ps, name + ".o", width, width, rng) {
  if (heads == 0 || width % heads != 0)
    throw Error(ErrorCode::config_error, "attention width " + std::to_string(width) + " not divisible by heads");
}

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& memory, bool causal) const {
  const Tensor q = q_(query);
  const Tensor k = k_(memory);
  const Tensor v = v_(memory);
  const std::size_t dh = width_ / heads_;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  // Queries and keys share positions when causal, so the diagonal is visible.
  std::vector<Tensor> outs;
  outs.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    const Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    const Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    const Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    const Tensor scores = scale(matmul_nt(qh, kh), inv);
    outs.push_back(matmul(softmax_rows(scores, causal), vh));
  }
  const Tensor merged = heads_ == 1 ? outs.front() : concat_cols(outs);
  return o_(merged);
}

FeedForward::FeedForward(ParamStore& ps, const std::string& name, std::size_t width, std::size_t hidden, Rng& rng)
    : up_(ps, name + ".up", width, hidden, rng), down_(ps, name + ".down", hidden, width, rng) {}

Tensor FeedForward::operator()(const Tensor& x) const { return down_(gelu(up_(x))); }

EncoderLayer::EncoderLayer(ParamStore& ps, const std::string& name, std::size_t width, std::size_t heads, Rng& rng)
    : ln1_(ps, name + ".ln1", width),
      ln2_(ps, name + ".ln2", width),
      attn_(ps, name + ".attn", width, heads, rng),
      mlp_(ps, name + ".mlp", width, 4 * width, rng) {}

Tensor EncoderLayer::operator()(const Tensor& x, bool causal) const {
  const Tensor h = ln1_(x);
  const Tensor x1 = add(x, attn_(h, h, causal));
  return add(x1, mlp_(ln2_(x1)));
}

DecoderLayer::DecoderLayer(ParamStore& ps, const std::string& name, std::size_t width, std::size_t heads, Rng& rng)
    : ln1_(ps, name + ".ln1", width),
      ln2_(ps, name + ".ln2", width),
      ln3_(ps, name + ".ln3", width),
      self_attn_(ps, name + ".self_attn", width, heads, rng),
      cross_attn_(ps, name + ".cross_attn", width, heads, rng),
      mlp_(ps, name + ".mlp", width, 4 * width, rng) {}

Tensor DecoderLayer::operator()(const Tensor& x, const Tensor& memory) const {
  const Tensor h = ln1_(x);
  const Tensor x1 = add(x, self_attn_(h, h, true));
  const Tensor x2 = add(x1, cross_attn_(ln2_(x1), memory, false));
  return add(x2, mlp_(ln3_(x2)));
}

Tensor sinusoidal_positions(std::size_t length, std::size_t width) {
  std::vector<double> v(length * width);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < width; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      const double angle = static_cast<double>(pos) * rate;
      v[pos * width + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::from(length, width, std::move(v));
}

}  // namespace ctn::nn
