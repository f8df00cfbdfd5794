#pragma once

#include <cstdint>
#include <string>

#include "ctn/data/dataset.hpp"

namespace ctn::train {

/// Procedural dataset: each clip's first half shows a cause pattern and its
/// second half an effect pattern; the CTN caption names both.
struct ToySpec {
  std::size_t videos = 8;
  std::size_t cause_patterns = 4;
  std::size_t effect_patterns = 4;
  double duration_s = 4.0;
  int frame_size = 16;
  std::uint64_t seed = 0;
  /// Videos after the first n_train go to val, then test.
  std::size_t val = 0;
  std::size_t test = 0;
  std::string id_prefix = "toy";
};

inline constexpr std::size_t kToyPatterns = 6;

const std::string& toy_cause_phrase(std::size_t pattern);
const std::string& toy_effect_phrase(std::size_t pattern);

/// (cause, effect) pattern pair for video k; distinct for k < cause_patterns * effect_patterns.
std::pair<std::size_t, std::size_t> toy_combo(const ToySpec& spec, std::size_t k);

data::DatasetManifest make_toy_manifest(const ToySpec& spec);

}  // namespace ctn::train
