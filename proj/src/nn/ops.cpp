#include "ctn/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "ctn/error.hpp"
#include "ctn/kernels/kernels.hpp"

namespace ctn::nn {
namespace {

using NodePtr = std::shared_ptr<Node>;

NodePtr make_node(std::size_t rows, std::size_t cols, std::initializer_list<const Tensor*> inputs) {
  auto out = std::make_shared<Node>();
  out->rows = rows;
  out->cols = cols;
  out->value.assign(rows * cols, 0.0);
  if (grad_enabled()) {
    bool any = false;
    for (const Tensor* t : inputs) any = any || t->requires_grad();
    if (any) {
      out->requires_grad = true;
      for (const Tensor* t : inputs) out->parents.push_back(t->shared());
    }
  }
  return out;
}

NodePtr make_node_n(std::size_t rows, std::size_t cols, std::span<const Tensor> inputs) {
  auto out = std::make_shared<Node>();
  out->rows = rows;
  out->cols = cols;
  out->value.assign(rows * cols, 0.0);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      out->requires_grad = true;
      for (const auto& t : inputs) out->parents.push_back(t.shared());
    }
  }
  return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::dimension_mismatch,
                std::string(op) + ": " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                    " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

bool wants(const NodePtr& p) { return p->requires_grad; }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw Error(ErrorCode::dimension_mismatch, "matmul inner dims");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  auto out = make_node(m, n, {&a, &b});
  kernels::gemm_acc(a.values().data(), b.values().data(), out->value.data(), m, k, n);
  if (out->requires_grad) {
    out->backward = [m, k, n](Node& self) {
      auto& pa = self.parents[0];
      auto& pb = self.parents[1];
      if (wants(pa)) kernels::gemm_nt_acc(self.grad.data(), pb->value.data(), pa->grad_buffer().data(), m, n, k);
      if (wants(pb)) kernels::gemm_tn_acc(pa->value.data(), self.grad.data(), pb->grad_buffer().data(), m, k, n);
    };
  }
  return Tensor(out);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw Error(ErrorCode::dimension_mismatch, "matmul_nt inner dims");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  auto out = make_node(m, n, {&a, &b});
  kernels::gemm_nt_acc(a.values().data(), b.values().data(), out->value.data(), m, k, n);
  if (out->requires_grad) {
    out->backward = [m, k, n](Node& self) {
      auto& pa = self.parents[0];
      auto& pb = self.parents[1];
      // dA = dC * B ; dB = dC^T * A
      if (wants(pa)) kernels::gemm_acc(self.grad.data(), pb->value.data(), pa->grad_buffer().data(), m, n, k);
      if (wants(pb)) kernels::gemm_tn_acc(self.grad.data(), pa->value.data(), pb->grad_buffer().data(), m, n, k);
    };
  }
  return Tensor(out);
}

Tensor transpose(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  auto out = make_node(c, r, {&a});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out->value[j * r + i] = a.values()[i * c + j];
  if (out->requires_grad) {
    out->backward = [r, c](Node& self) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    };
  }
  return Tensor(out);
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto out = make_node(a.rows(), a.cols(), {&a, &b});
  kernels::active().add(a.values().data(), b.values().data(), out->value.data(), a.size());
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      for (auto& p : self.parents) {
        if (wants(p)) kernels::active().axpy(1.0, self.grad.data(), p->grad_buffer().data(), self.grad.size());
      }
    };
  }
  return Tensor(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto out = make_node(a.rows(), a.cols(), {&a, &b});
  for (std::size_t i = 0; i < a.size(); ++i) out->value[i] = a.values()[i] - b.values()[i];
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      const auto n = self.grad.size();
      if (wants(self.parents[0])) kernels::active().axpy(1.0, self.grad.data(), self.parents[0]->grad_buffer().data(), n);
      if (wants(self.parents[1])) kernels::active().axpy(-1.0, self.grad.data(), self.parents[1]->grad_buffer().data(), n);
    };
  }
  return Tensor(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto out = make_node(a.rows(), a.cols(), {&a, &b});
  kernels::active().mul(a.values().data(), b.values().data(), out->value.data(), a.size());
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      auto& pa = self.parents[0];
      auto& pb = self.parents[1];
      const auto n = self.grad.size();
      if (wants(pa)) {
        auto& g = pa->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * pb->value[i];
      }
      if (wants(pb)) {
        auto& g = pb->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * pa->value[i];
      }
    };
  }
  return Tensor(out);
}

Tensor scale(const Tensor& a, double s) {
  auto out = make_node(a.rows(), a.cols(), {&a});
  std::copy(a.values().begin(), a.values().end(), out->value.begin());
  kernels::active().scale(s, out->value.data(), out->value.size());
  if (out->requires_grad) {
    out->backward = [s](Node& self) {
      kernels::active().axpy(s, self.grad.data(), self.parents[0]->grad_buffer().data(), self.grad.size());
    };
  }
  return Tensor(out);
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw Error(ErrorCode::dimension_mismatch, "scale_by expects 1x1 factor");
  auto out = make_node(a.rows(), a.cols(), {&a, &s});
  const double f = s.item();
  std::copy(a.values().begin(), a.values().end(), out->value.begin());
  kernels::active().scale(f, out->value.data(), out->value.size());
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      auto& pa = self.parents[0];
      auto& ps = self.parents[1];
      const double f = ps->value[0];
      const auto n = self.grad.size();
      if (wants(pa)) kernels::active().axpy(f, self.grad.data(), pa->grad_buffer().data(), n);
      if (wants(ps)) ps->grad_buffer()[0] += kernels::active().dot(self.grad.data(), pa->value.data(), n);
    };
  }
  return Tensor(out);
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw Error(ErrorCode::dimension_mismatch, "add_row");
  const std::size_t r = a.rows(), c = a.cols();
  auto out = make_node(r, c, {&a, &row});
  for (std::size_t i = 0; i < r; ++i)
    kernels::active().add(a.values().data() + i * c, row.values().data(), out->value.data() + i * c, c);
  if (out->requires_grad) {
    out->backward = [r, c](Node& self) {
      auto& pa = self.parents[0];
      auto& pr = self.parents[1];
      if (wants(pa)) kernels::active().axpy(1.0, self.grad.data(), pa->grad_buffer().data(), r * c);
      if (wants(pr)) {
        auto& g = pr->grad_buffer();
        for (std::size_t i = 0; i < r; ++i) kernels::active().axpy(1.0, self.grad.data() + i * c, g.data(), c);
      }
    };
  }
  return Tensor(out);
}

Tensor exp(const Tensor& a) {
  auto out = make_node(a.rows(), a.cols(), {&a});
  for (std::size_t i = 0; i < a.size(); ++i) out->value[i] = std::exp(a.values()[i]);
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.value[i];
    };
  }
  return Tensor(out);
}

Tensor gelu(const Tensor& a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  auto out = make_node(a.rows(), a.cols(), {&a});
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a.values()[i];
    out->value[i] = 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
  }
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      auto& p = self.parents[0];
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = p->value[i];
        const double u = k * (x + 0.044715 * x * x * x);
        const double t = std::tanh(u);
        const double du = k * (1.0 + 3.0 * 0.044715 * x * x);
        g[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
      }
    };
  }
  return Tensor(out);
}

Tensor relu(const Tensor& a) {
  auto out = make_node(a.rows(), a.cols(), {&a});
  for (std::size_t i = 0; i < a.size(); ++i) out->value[i] = std::max(0.0, a.values()[i]);
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      auto& p = self.parents[0];
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (p->value[i] > 0.0) g[i] += self.grad[i];
    };
  }
  return Tensor(out);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t r = x.rows(), c = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != c || beta.rows() != 1 || beta.cols() != c)
    throw Error(ErrorCode::dimension_mismatch, "layer_norm affine shape");
  auto out = make_node(r, c, {&x, &gamma, &beta});
  std::vector<double> xhat(r * c);
  std::vector<double> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.values().data() + i * c;
    const double mean = kernels::active().sum(row, c) / static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (row[j] - mean) * inv_std[i];
      out->value[i * c + j] = xhat[i * c + j] * gamma.values()[j] + beta.values()[j];
    }
  }
  if (out->requires_grad) {
    out->backward = [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
      auto& px = self.parents[0];
      auto& pg = self.parents[1];
      auto& pb = self.parents[2];
      const auto& gam = pg->value;
      if (wants(pg) || wants(pb)) {
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            const double dy = self.grad[i * c + j];
            if (wants(pg)) pg->grad_buffer()[j] += dy * xhat[i * c + j];
            if (wants(pb)) pb->grad_buffer()[j] += dy;
          }
        }
      }
      if (wants(px)) {
        auto& gx = px->grad_buffer();
        std::vector<double> dxhat(c);
        for (std::size_t i = 0; i < r; ++i) {
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            dxhat[j] = self.grad[i * c + j] * gam[j];
            s1 += dxhat[j];
            s2 += dxhat[j] * xhat[i * c + j];
          }
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t j = 0; j < c; ++j) {
            gx[i * c + j] += inv_std[i] * (dxhat[j] - inv_c * s1 - xhat[i * c + j] * inv_c * s2);
          }
        }
      }
    };
  }
  return Tensor(out);
}

Tensor softmax_rows(const Tensor& x, bool causal, std::size_t offset) {
  const std::size_t r = x.rows(), c = x.cols();
  auto out = make_node(r, c, {&x});
  for (std::size_t i = 0; i < r; ++i) {
    const double* in = x.values().data() + i * c;
    double* o = out->value.data() + i * c;
    const std::size_t limit = causal ? std::min(c, i + offset + 1) : c;
    const double mx = kernels::active().max(in, limit);
    double s = 0.0;
    for (std::size_t j = 0; j < limit; ++j) {
      o[j] = std::exp(in[j] - mx);
      s += o[j];
    }
    for (std::size_t j = 0; j < limit; ++j) o[j] /= s;
  }
  if (out->requires_grad) {
    out->backward = [r, c](Node& self) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < r; ++i) {
        const double* y = self.value.data() + i * c;
        const double* dy = self.grad.data() + i * c;
        const double d = kernels::active().dot(y, dy, c);
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[j] * (dy[j] - d);
      }
    };
  }
  return Tensor(out);
}

Tensor log_softmax_rows(const Tensor& x) {
  const std::size_t r = x.rows(), c = x.cols();
  auto out = make_node(r, c, {&x});
  for (std::size_t i = 0; i < r; ++i) {
    const double* in = x.values().data() + i * c;
    const double mx = kernels::active().max(in, c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(in[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) out->value[i * c + j] = in[j] - lse;
  }
  if (out->requires_grad) {
    out->backward = [r, c](Node& self) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += self.grad[i * c + j];
        for (std::size_t j = 0; j < c; ++j)
          g[i * c + j] += self.grad[i * c + j] - std::exp(self.value[i * c + j]) * s;
      }
    };
  }
  return Tensor(out);
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw Error(ErrorCode::empty_input, "concat_rows of nothing");
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) throw Error(ErrorCode::dimension_mismatch, "concat_rows column count");
    r += p.rows();
  }
  auto out = make_node_n(r, c, parts);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.values().begin(), p.values().end(), out->value.begin() + static_cast<long>(off));
    off += p.size();
  }
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      std::size_t off = 0;
      for (auto& p : self.parents) {
        const std::size_t n = p->value.size();
        if (wants(p)) kernels::active().axpy(1.0, self.grad.data() + off, p->grad_buffer().data(), n);
        off += n;
      }
    };
  }
  return Tensor(out);
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw Error(ErrorCode::empty_input, "concat_cols of nothing");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw Error(ErrorCode::dimension_mismatch, "concat_cols row count");
    c += p.cols();
  }
  auto out = make_node_n(r, c, parts);
  std::size_t col = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(p.values().data() + i * p.cols(), p.cols(), out->value.data() + i * c + col);
    col += p.cols();
  }
  if (out->requires_grad) {
    out->backward = [r, c](Node& self) {
      std::size_t col = 0;
      for (auto& p : self.parents) {
        const std::size_t pc = p->cols;
        if (wants(p)) {
          auto& g = p->grad_buffer();
          for (std::size_t i = 0; i < r; ++i)
            kernels::active().axpy(1.0, self.grad.data() + i * c + col, g.data() + i * pc, pc);
        }
        col += pc;
      }
    };
  }
  return Tensor(out);
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.rows()) throw Error(ErrorCode::dimension_mismatch, "slice_rows range");
  const std::size_t c = a.cols();
  auto out = make_node(end - begin, c, {&a});
  std::copy(a.values().begin() + static_cast<long>(begin * c), a.values().begin() + static_cast<long>(end * c),
            out->value.begin());
  if (out->requires_grad) {
    out->backward = [begin, c](Node& self) {
      auto& g = self.parents[0]->grad_buffer();
      kernels::active().axpy(1.0, self.grad.data(), g.data() + begin * c, self.grad.size());
    };
  }
  return Tensor(out);
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.cols()) throw Error(ErrorCode::dimension_mismatch, "slice_cols range");
  const std::size_t r = a.rows(), c = a.cols(), w = end - begin;
  auto out = make_node(r, w, {&a});
  for (std::size_t i = 0; i < r; ++i) std::copy_n(a.values().data() + i * c + begin, w, out->value.data() + i * w);
  if (out->requires_grad) {
    out->backward = [r, c, w, begin](Node& self) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        kernels::active().axpy(1.0, self.grad.data() + i * w, g.data() + i * c + begin, w);
    };
  }
  return Tensor(out);
}

Tensor mean_rows(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  if (r == 0) throw Error(ErrorCode::empty_input, "mean_rows of zero rows");
  auto out = make_node(1, c, {&a});
  const double inv = 1.0 / static_cast<double>(r);
  for (std::size_t i = 0; i < r; ++i) kernels::active().axpy(inv, a.values().data() + i * c, out->value.data(), c);
  if (out->requires_grad) {
    out->backward = [r, c, inv](Node& self) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < r; ++i) kernels::active().axpy(inv, self.grad.data(), g.data() + i * c, c);
    };
  }
  return Tensor(out);
}

Tensor sum_all(const Tensor& a) {
  auto out = make_node(1, 1, {&a});
  out->value[0] = kernels::active().sum(a.values().data(), a.size());
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      auto& g = self.parents[0]->grad_buffer();
      for (auto& v : g) v += self.grad[0];
    };
  }
  return Tensor(out);
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.size())); }

Tensor l2_normalize_rows(const Tensor& a, double min_norm) {
  const std::size_t r = a.rows(), c = a.cols();
  auto out = make_node(r, c, {&a});
  std::vector<double> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = a.values().data() + i * c;
    norms[i] = std::sqrt(kernels::active().dot(row, row, c));
    if (!(norms[i] > min_norm)) {
      throw Error(ErrorCode::degenerate_embedding, "row " + std::to_string(i) + " has near-zero norm");
    }
    for (std::size_t j = 0; j < c; ++j) out->value[i * c + j] = row[j] / norms[i];
  }
  if (out->requires_grad) {
    out->backward = [r, c, norms = std::move(norms)](Node& self) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < r; ++i) {
        const double* y = self.value.data() + i * c;
        const double* dy = self.grad.data() + i * c;
        const double d = kernels::active().dot(y, dy, c);
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += (dy[j] - y[j] * d) / norms[i];
      }
    };
  }
  return Tensor(out);
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  const std::size_t c = table.cols();
  auto out = make_node(ids.size(), c, {&table});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= table.rows()) throw Error(ErrorCode::out_of_vocabulary, "id " + std::to_string(ids[i]));
    std::copy_n(table.values().data() + ids[i] * c, c, out->value.data() + i * c);
  }
  if (out->requires_grad) {
    out->backward = [c, ids = std::vector<std::size_t>(ids.begin(), ids.end())](Node& self) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < ids.size(); ++i)
        kernels::active().axpy(1.0, self.grad.data() + i * c, g.data() + ids[i] * c, c);
    };
  }
  return Tensor(out);
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets, std::size_t ignore_index) {
  const std::size_t r = logits.rows(), c = logits.cols();
  if (targets.size() != r) throw Error(ErrorCode::dimension_mismatch, "cross_entropy target count");
  auto out = make_node(1, 1, {&logits});
  std::vector<double> probs(r * c, 0.0);
  std::size_t counted = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    if (targets[i] == ignore_index) continue;
    if (targets[i] >= c) throw Error(ErrorCode::out_of_vocabulary, "target " + std::to_string(targets[i]));
    const double* in = logits.values().data() + i * c;
    const double mx = kernels::active().max(in, c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(in[j] - mx);
      s += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= s;
    total += -(in[targets[i]] - mx - std::log(s));
    ++counted;
  }
  out->value[0] = counted ? total / static_cast<double>(counted) : 0.0;
  if (out->requires_grad && counted) {
    out->backward = [r, c, counted, probs = std::move(probs),
                     tg = std::vector<std::size_t>(targets.begin(), targets.end()), ignore_index](Node& self) {
      auto& g = self.parents[0]->grad_buffer();
      const double scale = self.grad[0] / static_cast<double>(counted);
      for (std::size_t i = 0; i < r; ++i) {
        if (tg[i] == ignore_index) continue;
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += scale * probs[i * c + j];
        g[i * c + tg[i]] -= scale;
      }
    };
  }
  return Tensor(out);
}

}  // namespace ctn::nn
