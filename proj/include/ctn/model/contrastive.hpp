#pragma once

#include <cstddef>
#include <vector>

#include "ctn/nn/tensor.hpp"

namespace ctn::model {

struct SimilarityMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  SimilarityMatrix transposed() const;
};

/// S[i][j] = cosine(video_i, text_j) for N x d inputs. Throws on zero-norm rows or dim mismatch.
SimilarityMatrix similarity(const nn::Tensor& video, const nn::Tensor& text);
/// Differentiable variant for training.
nn::Tensor similarity_tensor(const nn::Tensor& video, const nn::Tensor& text);

struct ContrastiveLoss {
  double v2t = 0.0;
  double t2v = 0.0;
  double total = 0.0;
  /// d total / d S, row-major N x N.
  std::vector<double> grad;
};

/// Symmetric cross-entropy over scale * S with the diagonal as targets.
ContrastiveLoss contrastive_loss(const SimilarityMatrix& S, double scale);

struct ContrastiveTerms {
  nn::Tensor v2t;
  nn::Tensor t2v;
  nn::Tensor total;
};

/// Same loss on the autodiff graph; scale is a 1x1 tensor.
ContrastiveTerms contrastive_loss(const nn::Tensor& S, const nn::Tensor& scale);

}  // namespace ctn::model
