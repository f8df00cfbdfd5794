#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ctn/nn/tensor.hpp"

namespace ctn::nn {

using Rng = std::mt19937_64;

/// Ordered collection of named trainable leaves.
class ParamStore {
 public:
  Tensor normal(const std::string& name, std::size_t rows, std::size_t cols, double stddev, Rng& rng);
  Tensor constant(const std::string& name, std::size_t rows, std::size_t cols, double value);
  /// Registers an existing leaf (used when loading).
  Tensor adopt(const std::string& name, Tensor t);

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t parameter_count() const;

  void zero_grad();
  /// Marks every leaf as (non-)trainable. Frozen leaves stop recording graphs.
  void set_trainable(bool trainable);

  /// Copies values from another store with identical names and shapes.
  void copy_values_from(const ParamStore& other);

  /// SHA-256 over names, shapes and raw values in registration order.
  std::string hash() const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg);

  /// Applies one update from the accumulated gradients, then clears them.
  void step();
  std::uint64_t steps() const { return steps_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::uint64_t steps_ = 0;
};

/// Named tensors plus JSON metadata, stored in a stable little-endian container.
struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  static Checkpoint from_store(const ParamStore& store, nlohmann::json metadata);
  /// Overwrites values of every store entry; missing or mis-shaped entries throw.
  void restore_into(ParamStore& store) const;
};

}  // namespace ctn::nn
