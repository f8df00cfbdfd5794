#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ctn/nn/ops.hpp"
#include "ctn/nn/params.hpp"

namespace ctn::nn {

constexpr double kInitStd = 0.02;

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool bias = true);
  Tensor operator()(const Tensor& x) const;
  std::size_t in_features() const { return weight_.rows(); }
  std::size_t out_features() const { return weight_.cols(); }

 private:
  Tensor weight_;
  Tensor bias_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& name, std::size_t dim);
  Tensor operator()(const Tensor& x) const;

 private:
  Tensor gamma_;
  Tensor beta_;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& ps, const std::string& name, std::size_t width, std::size_t heads, Rng& rng);
  /// Attends from query rows to key/value rows. causal masks keys after each query position.
  Tensor operator()(const Tensor& query, const Tensor& memory, bool causal = false) const;

 private:
  std::size_t heads_ = 1;
  std::size_t width_ = 0;
  Linear q_, k_, v_, o_;
};

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParamStore& ps, const std::string& name, std::size_t width, std::size_t hidden, Rng& rng);
  Tensor operator()(const Tensor& x) const;

 private:
  Linear up_, down_;
};

/// Pre-norm transformer encoder block.
class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(ParamStore& ps, const std::string& name, std::size_t width, std::size_t heads, Rng& rng);
  Tensor operator()(const Tensor& x, bool causal = false) const;

 private:
  LayerNorm ln1_, ln2_;
  MultiHeadAttention attn_;
  FeedForward mlp_;
};

/// Pre-norm decoder block: causal self-attention, cross-attention, feed-forward.
class DecoderLayer {
 public:
  DecoderLayer() = default;
  DecoderLayer(ParamStore& ps, const std::string& name, std::size_t width, std::size_t heads, Rng& rng);
  Tensor operator()(const Tensor& x, const Tensor& memory) const;

 private:
  LayerNorm ln1_, ln2_, ln3_;
  MultiHeadAttention self_attn_, cross_attn_;
  FeedForward mlp_;
};

/// Fixed sine/cosine position table, rows = positions.
Tensor sinusoidal_positions(std::size_t length, std::size_t width);

}  // namespace ctn::nn
