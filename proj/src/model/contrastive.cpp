#include "ctn/model/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctn/error.hpp"
#include "ctn/kernels/kernels.hpp"
#include "ctn/nn/ops.hpp"

namespace ctn::model {

SimilarityMatrix SimilarityMatrix::transposed() const {
  SimilarityMatrix t{cols, rows, std::vector<double>(values.size())};
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) t.values[j * rows + i] = values[i * cols + j];
  return t;
}

namespace {

void check_pair(const nn::Tensor& video, const nn::Tensor& text) {
  if (video.cols() != text.cols())
    throw Error(ErrorCode::dimension_mismatch, "video dim " + std::to_string(video.cols()) + " vs text dim " +
                                                   std::to_string(text.cols()));
  if (video.rows() == 0 || text.rows() == 0) throw Error(ErrorCode::empty_input, "empty embedding batch");
}

}  // namespace

SimilarityMatrix similarity(const nn::Tensor& video, const nn::Tensor& text) {
  check_pair(video, text);
  const auto& k = kernels::active();
  const std::size_t d = video.cols();
  auto norms = [&](const nn::Tensor& m) {
    std::vector<double> n(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
      const auto r = m.row(i);
      n[i] = std::sqrt(k.dot(r.data(), r.data(), d));
      if (!(n[i] > 0.0)) throw Error(ErrorCode::degenerate_embedding, "zero-norm row " + std::to_string(i));
    }
    return n;
  };
  const auto nv = norms(video), nt = norms(text);
  SimilarityMatrix s{video.rows(), text.rows(), std::vector<double>(video.rows() * text.rows())};
  for (std::size_t i = 0; i < s.rows; ++i)
    for (std::size_t j = 0; j < s.cols; ++j)
      s.values[i * s.cols + j] = k.dot(video.row(i).data(), text.row(j).data(), d) / (nv[i] * nt[j]);
  return s;
}

nn::Tensor similarity_tensor(const nn::Tensor& video, const nn::Tensor& text) {
  check_pair(video, text);
  return nn::matmul_nt(nn::l2_normalize_rows(video, 1e-9), nn::l2_normalize_rows(text, 1e-9));
}

ContrastiveLoss contrastive_loss(const SimilarityMatrix& S, double scale) {
  if (S.rows != S.cols) throw Error(ErrorCode::dimension_mismatch, "similarity matrix must be square");
  if (S.rows == 0) throw Error(ErrorCode::empty_input, "empty similarity matrix");
  if (!(scale > 0.0)) throw Error(ErrorCode::invariant_violation, "scale must be > 0");
  const std::size_t n = S.rows;
  const double inv_n = 1.0 / static_cast<double>(n);
  ContrastiveLoss out;
  out.grad.assign(n * n, 0.0);
  std::vector<double> p(n);

  // Rows: video i against all texts.
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, scale * S.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (p[j] = std::exp(scale * S.at(i, j) - mx));
    out.v2t += -(scale * S.at(i, i) - mx - std::log(z)) * inv_n;
    for (std::size_t j = 0; j < n; ++j)
      out.grad[i * n + j] += scale * inv_n * (p[j] / z - (i == j ? 1.0 : 0.0));
  }
  // Columns: text j against all videos.
  for (std::size_t j = 0; j < n; ++j) {
    double mx = -INFINITY;
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, scale * S.at(i, j));
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += (p[i] = std::exp(scale * S.at(i, j) - mx));
    out.t2v += -(scale * S.at(j, j) - mx - std::log(z)) * inv_n;
    for (std::size_t i = 0; i < n; ++i)
      out.grad[i * n + j] += scale * inv_n * (p[i] / z - (i == j ? 1.0 : 0.0));
  }
  out.total = out.v2t + out.t2v;
  return out;
}

ContrastiveTerms contrastive_loss(const nn::Tensor& S, const nn::Tensor& scale) {
  if (S.rows() != S.cols()) throw Error(ErrorCode::dimension_mismatch, "similarity matrix must be square");
  std::vector<std::size_t> diag(S.rows());
  std::iota(diag.begin(), diag.end(), 0);
  const nn::Tensor logits = nn::scale_by(S, scale);
  ContrastiveTerms t;
  t.v2t = nn::cross_entropy(logits, diag);
  t.t2v = nn::cross_entropy(nn::transpose(logits), diag);
  t.total = nn::add(t.v2t, t.t2v);
  return t;
}

}  // namespace ctn::model
