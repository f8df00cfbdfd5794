#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>
#include <functional>
#include <vector>

#include <doctest.h>

#include "ctn/error.hpp"
#include "ctn/nn/tensor.hpp"

namespace ctn::testing {

inline std::filesystem::path data_dir() { return CTN_TEST_DATA_DIR; }

/// Hand-rolled generator for property tests.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  std::size_t index(std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_); }
  bool coin() { return index(0, 1) == 1; }

  std::string word() {
    static const char* kWords[] = {"a",    "the",   "dog",   "car",   "runs",  "falls", "over",  "into",
                                   "red",  "ball",  "boy",   "water", "spills", "after", "slowly", "crowd",
                                   "window", "breaks", "rain", "road"};
    return kWords[index(0, std::size(kWords) - 1)];
  }
  std::string sentence(std::size_t lo, std::size_t hi) {
    std::string s;
    for (std::size_t i = 0, n = index(lo, hi); i < n; ++i) s += (i ? " " : "") + word();
    return s;
  }
  std::vector<double> values(std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = uniform(lo, hi);
    return v;
  }
  nn::Tensor tensor(std::size_t rows, std::size_t cols, bool requires_grad = false) {
    return nn::Tensor::from(rows, cols, values(rows * cols), requires_grad);
  }
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

/// Fresh directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("ctn_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Largest relative error between autodiff and central-difference gradients of
/// loss() with respect to every entry of each input.
inline double max_fd_error(const std::function<nn::Tensor()>& loss, std::vector<nn::Tensor> inputs, double h = 1e-6) {
  for (auto& t : inputs) t.zero_grad();
  loss().backward();
  double worst = 0.0;
  for (auto& t : inputs) {
    const auto analytic = t.grad();
    auto v = t.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double keep = v[i];
      v[i] = keep + h;
      const double up = loss().item();
      v[i] = keep - h;
      const double down = loss().item();
      v[i] = keep;
      const double numeric = (up - down) / (2 * h);
      const double err = std::abs(numeric - analytic[i]) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

template <class F>
ErrorCode thrown_code(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected ctn::Error");
  return ErrorCode::config_error;
}

}  // namespace ctn::testing
