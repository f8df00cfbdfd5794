#include "ctn/train/toy.hpp"

#include <array>
#include <cstdio>

#include "ctn/error.hpp"

namespace ctn::train {

namespace {

const std::array<std::string, kToyPatterns> kCause = {
    "a boy kicks a ball toward the window",
    "a woman leaves the stove on high heat",
    "a dog pulls hard on its leash",
    "heavy rain falls on the dirt road",
    "a man drops a glass on the floor",
    "the wind knocks over a tall ladder",
};

const std::array<std::string, kToyPatterns> kEffect = {
    "the window breaks and everyone runs outside",
    "smoke fills the kitchen and the alarm sounds",
    "the owner trips and falls on the grass",
    "the car gets stuck in deep mud",
    "pieces scatter and the cat jumps away",
    "the painter climbs down to fix it",
};

const std::array<std::string, kToyPatterns> kCauseScene = {
    "a boy is playing with a ball", "a pot sits on a hot stove",   "a dog is on a leash",
    "rain is falling on a road",    "a man is holding a glass",     "a ladder stands against a wall",
};

const std::array<std::string, kToyPatterns> kEffectScene = {
    "a window is broken",     "a kitchen is full of smoke", "a person is lying on the grass",
    "a car is stuck in mud",  "glass is on the floor",      "a painter is on the ground",
};

}  // namespace

const std::string& toy_cause_phrase(std::size_t pattern) { return kCause.at(pattern); }
const std::string& toy_effect_phrase(std::size_t pattern) { return kEffect.at(pattern); }

std::pair<std::size_t, std::size_t> toy_combo(const ToySpec& spec, std::size_t k) {
  const std::size_t c = k % spec.cause_patterns;
  const std::size_t e = (k / spec.cause_patterns + k) % spec.effect_patterns;
  return {c, e};
}

data::DatasetManifest make_toy_manifest(const ToySpec& spec) {
  if (spec.cause_patterns == 0 || spec.cause_patterns > kToyPatterns || spec.effect_patterns == 0 ||
      spec.effect_patterns > kToyPatterns)
    throw Error(ErrorCode::config_error, "toy pattern counts must be in [1, 6]");
  if (spec.val + spec.test > spec.videos) throw Error(ErrorCode::config_error, "toy split sizes exceed video count");
  data::DatasetManifest m;
  const std::size_t n_train = spec.videos - spec.val - spec.test;
  for (std::size_t k = 0; k < spec.videos; ++k) {
    const auto [c, e] = toy_combo(spec, k);
    char id[64];
    std::snprintf(id, sizeof id, "%s%04zu", spec.id_prefix.c_str(), k);
    data::VideoRecord r;
    r.video_id = id;
    r.media_path = "synth:seed=" + std::to_string(spec.seed * 100003 + k) + ";fps=1;size=" +
                   std::to_string(spec.frame_size) + ";cause=" + std::to_string(c) + ";effect=" + std::to_string(e);
    r.duration_s = spec.duration_s;
    r.dataset_tag = data::DatasetTag::custom;
    r.split = k < n_train ? data::Split::train : (k < n_train + spec.val ? data::Split::val : data::Split::test);
    m.records.push_back(r);
    m.caption_index[r.video_id] = data::DescriptiveCaptionSet{r.video_id, {kCauseScene[c], kEffectScene[e]}};
    m.ctn_index[r.video_id] = data::CtnCaption{r.video_id, kCause[c], kEffect[e], std::nullopt, std::nullopt};
  }
  m.validate();
  return m;
}

}  // namespace ctn::train
