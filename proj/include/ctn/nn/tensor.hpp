#pragma once

// Minimal reverse-mode autodiff over row-major double matrices.
//
// A Tensor is a shared handle to a graph node. Operations in ops.hpp record a
// backward closure on their output when grad mode is on and any input needs a
// gradient. Leaves created with requires_grad=true (parameters) persist across
// steps; intermediate nodes are released with the last handle to the loss.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace ctn::nn {

struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
  static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(node_->value).subspan(r * cols(), cols());
  }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  /// Gradient accumulated by the last backward(); zeros if none reached this node.
  std::vector<double> grad() const;
  void zero_grad();

  /// Seeds d(self)/d(self) = 1 for a 1x1 tensor and propagates to all ancestors.
  void backward();

  /// Copy of the values with no graph attached.
  Tensor detach() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace ctn::nn
