// SPDX-License-Identifier: Apache-2.0
//
// Bit-exact feature/label file formats, loaders, and a seeded synthetic
// generator of continuous multi-label sequences with planted temporal lags.
//
// Feature file (`.tgmf`): magic `TGMF`, u32 version=1, u32 c, u32 d, u32 t,
// then c*d*t 32-bit little-endian floats in (c, then d, then t) order.
// Label file (`.tgml`): magic `TGML`, u32 version=1, u32 num_classes, u32 t,
// then t*num_classes bytes in {0,1}, t-major.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tgm/types.hpp"

namespace tgm {

struct FeatureSequence {
  int c = 0, d = 0, t = 0;
  ChannelStack values;  // c entries of d x t, 64-bit in memory
};

FeatureSequence makeFeatureSequence(ChannelStack values);

struct FrameLabels {
  int num_classes = 0, t = 0;
  Matrix z;  // num_classes x t, entries in {0, 1}
};

void saveFeatures(const std::string& path, const FeatureSequence& seq);
FeatureSequence loadFeatures(const std::string& path);
void saveLabels(const std::string& path, const FrameLabels& labels);
FrameLabels loadLabels(const std::string& path);

struct Dataset {
  std::vector<FeatureSequence> features;
  std::vector<FrameLabels> labels;

  std::size_t size() const { return features.size(); }
};

struct SynthSpec {
  int num_videos = 200;
  int d = 16;
  int t_min = 80;
  int t_max = 120;
  int num_classes = 5;
  std::vector<int> delays{0, 2, 4, 6, 8};  // label lag per class, frames
  int trigger_duration = 3;
  double noise_std = 0.5;
  int events_per_video = 6;
  double trigger_gain = 2.5;  // amplitude of the trigger direction write
  std::uint64_t seed = 0;
};

void validateSynthSpec(const SynthSpec& spec);

// Mutually orthonormal per-class trigger directions (num_classes x d),
// derived from the spec seed.
Matrix triggerDirections(const SynthSpec& spec);

// Background noise N(0, noise_std^2) in all d dims; each event of class c
// adds gain * direction_c to features over [t0, t0+duration) and sets
// z(c, t) = 1 over [t0+delay_c, t0+delay_c+duration). Deterministic in seed.
Dataset genSynthetic(const SynthSpec& spec);

// Dataset manifest: JSON array of {"features": path, "labels": path} pairs,
// paths relative to the manifest file.
void saveManifest(const std::string& path,
                  const std::vector<std::pair<std::string, std::string>>& pairs);
std::vector<std::pair<std::string, std::string>> loadManifest(const std::string& path);
Dataset loadDataset(const std::string& manifest_path);

}  // namespace tgm
