#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ctn/nn/tensor.hpp"

namespace ctn::nn {

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k] x [k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k] x [n,k]^T
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// a * s where s is a 1x1 tensor (gradient flows into s).
Tensor scale_by(const Tensor& a, const Tensor& s);
/// Adds a 1 x cols row to every row of a.
Tensor add_row(const Tensor& a, const Tensor& row);

Tensor exp(const Tensor& a);
Tensor gelu(const Tensor& a);  // tanh approximation
Tensor relu(const Tensor& a);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Row-wise softmax. With causal=true, entry (i, j) is masked when j > i + offset.
Tensor softmax_rows(const Tensor& x, bool causal = false, std::size_t offset = 0);
Tensor log_softmax_rows(const Tensor& x);

Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);

Tensor mean_rows(const Tensor& a);  // -> 1 x cols
Tensor sum_all(const Tensor& a);    // -> 1 x 1
Tensor mean_all(const Tensor& a);   // -> 1 x 1

/// Each row divided by its L2 norm. Throws degenerate_embedding below min_norm.
Tensor l2_normalize_rows(const Tensor& a, double min_norm = 1e-12);

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);

/// Mean over rows of -log softmax(logits)[r, target[r]], skipping rows whose
/// target equals ignore_index. Returns 1x1; zero when every row is ignored.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets,
                     std::size_t ignore_index = static_cast<std::size_t>(-1));

}  // namespace ctn::nn
