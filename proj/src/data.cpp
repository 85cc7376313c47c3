// SPDX-License-Identifier: Apache-2.0
#include "tgm/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "binio.hpp"

namespace tgm {

namespace {
constexpr char kFeatureMagic[4] = {'T', 'G', 'M', 'F'};
constexpr char kLabelMagic[4] = {'T', 'G', 'M', 'L'};
constexpr std::uint32_t kFormatVersion = 1;
}  // namespace

FeatureSequence makeFeatureSequence(ChannelStack values) {
  FeatureSequence seq;
  seq.c = static_cast<int>(values.size());
  seq.d = static_cast<int>(stackDim(values));
  seq.t = static_cast<int>(stackTime(values));
  seq.values = std::move(values);
  return seq;
}

void saveFeatures(const std::string& path, const FeatureSequence& seq) {
  if (seq.c < 1 || seq.d < 1 || seq.t < 1)
    throw ConfigError("saveFeatures: empty sequence");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  binio::writeBytes(os, kFeatureMagic, 4);
  binio::writeU32(os, kFormatVersion);
  binio::writeU32(os, static_cast<std::uint32_t>(seq.c));
  binio::writeU32(os, static_cast<std::uint32_t>(seq.d));
  binio::writeU32(os, static_cast<std::uint32_t>(seq.t));
  for (int c = 0; c < seq.c; ++c)
    for (int d = 0; d < seq.d; ++d)
      for (int t = 0; t < seq.t; ++t)
        binio::writeF32(os, static_cast<float>(seq.values[c](d, t)));
  os.flush();
  if (!os) throw IoError("write failed for '" + path + "'");
}

FeatureSequence loadFeatures(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  binio::Reader r(is, "features '" + path + "'");
  r.expectMagic(kFeatureMagic);
  const std::uint32_t version = r.readU32();
  if (version != kFormatVersion)
    throw FormatError("features '" + path + "': unsupported version " + std::to_string(version));
  FeatureSequence seq;
  seq.c = static_cast<int>(r.readU32());
  seq.d = static_cast<int>(r.readU32());
  seq.t = static_cast<int>(r.readU32());
  if (seq.c < 1 || seq.d < 1 || seq.t < 1)
    throw FormatError("features '" + path + "': degenerate shape in header");
  seq.values.assign(seq.c, Matrix(seq.d, seq.t));
  for (int c = 0; c < seq.c; ++c)
    for (int d = 0; d < seq.d; ++d)
      for (int t = 0; t < seq.t; ++t) {
        const float v = r.readF32();
        if (!std::isfinite(v))
          throw FormatError("features '" + path + "': non-finite value at byte offset " +
                            std::to_string(r.offset() - 4));
        seq.values[c](d, t) = static_cast<double>(v);
      }
  if (!r.atEof())
    throw FormatError("features '" + path + "': trailing bytes at offset " +
                      std::to_string(r.offset()));
  return seq;
}

void saveLabels(const std::string& path, const FrameLabels& labels) {
  if (labels.num_classes < 1 || labels.t < 1) throw ConfigError("saveLabels: empty labels");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  binio::writeBytes(os, kLabelMagic, 4);
  binio::writeU32(os, kFormatVersion);
  binio::writeU32(os, static_cast<std::uint32_t>(labels.num_classes));
  binio::writeU32(os, static_cast<std::uint32_t>(labels.t));
  for (int t = 0; t < labels.t; ++t)
    for (int c = 0; c < labels.num_classes; ++c) {
      const double z = labels.z(c, t);
      if (z != 0.0 && z != 1.0) throw ConfigError("saveLabels: labels must be 0 or 1");
      const unsigned char b = z != 0.0 ? 1 : 0;
      binio::writeBytes(os, &b, 1);
    }
  os.flush();
  if (!os) throw IoError("write failed for '" + path + "'");
}

FrameLabels loadLabels(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  binio::Reader r(is, "labels '" + path + "'");
  r.expectMagic(kLabelMagic);
  const std::uint32_t version = r.readU32();
  if (version != kFormatVersion)
    throw FormatError("labels '" + path + "': unsupported version " + std::to_string(version));
  FrameLabels labels;
  labels.num_classes = static_cast<int>(r.readU32());
  labels.t = static_cast<int>(r.readU32());
  if (labels.num_classes < 1 || labels.t < 1)
    throw FormatError("labels '" + path + "': degenerate shape in header");
  labels.z = Matrix(labels.num_classes, labels.t);
  for (int t = 0; t < labels.t; ++t)
    for (int c = 0; c < labels.num_classes; ++c) {
      unsigned char b;
      r.readBytes(&b, 1);
      if (b > 1)
        throw FormatError("labels '" + path + "': byte value " + std::to_string(b) +
                          " at offset " + std::to_string(r.offset() - 1) + " is not 0/1");
      labels.z(c, t) = b;
    }
  if (!r.atEof())
    throw FormatError("labels '" + path + "': trailing bytes at offset " +
                      std::to_string(r.offset()));
  return labels;
}

void validateSynthSpec(const SynthSpec& spec) {
  if (spec.num_videos < 1) throw ConfigError("synth spec: num_videos must be positive");
  if (spec.d < 1) throw ConfigError("synth spec: d must be positive");
  if (spec.t_min < 1 || spec.t_max < spec.t_min)
    throw ConfigError("synth spec: need 1 <= t_min <= t_max");
  if (spec.num_classes < 1) throw ConfigError("synth spec: num_classes must be positive");
  if (static_cast<int>(spec.delays.size()) != spec.num_classes)
    throw ConfigError("synth spec: delays must have one entry per class");
  if (spec.trigger_duration < 1) throw ConfigError("synth spec: trigger_duration must be positive");
  if (spec.noise_std < 0) throw ConfigError("synth spec: noise_std must be nonnegative");
  if (spec.events_per_video < 0) throw ConfigError("synth spec: events_per_video must be >= 0");
  if (spec.num_classes > spec.d)
    throw ConfigError("synth spec: orthogonal trigger directions need num_classes <= d");
  for (int delay : spec.delays) {
    if (delay < 0) throw ConfigError("synth spec: delays must be nonnegative");
    if (delay + spec.trigger_duration >= spec.t_min)
      throw ConfigError("synth spec: delay + duration must be < t_min");
  }
}

Matrix triggerDirections(const SynthSpec& spec) {
  validateSynthSpec(spec);
  Rng rng(deriveSeed(spec.seed, SeedStream::SynthGen) ^ 0x5eedd1aULL);
  Matrix dirs(spec.num_classes, spec.d);
  // Gram-Schmidt over seeded Gaussian draws; num_classes <= d guarantees
  // success for generic draws.
  for (int c = 0; c < spec.num_classes; ++c) {
    Vector v(spec.d);
    do {
      for (int j = 0; j < spec.d; ++j) v(j) = rng.normal();
      for (int p = 0; p < c; ++p) v -= dirs.row(p).dot(v) * dirs.row(p).transpose();
    } while (v.norm() < 1e-6);
    dirs.row(c) = v.transpose() / v.norm();
  }
  return dirs;
}

Dataset genSynthetic(const SynthSpec& spec) {
  validateSynthSpec(spec);
  const Matrix dirs = triggerDirections(spec);
  Rng rng(deriveSeed(spec.seed, SeedStream::SynthGen));
  Dataset data;
  data.features.reserve(spec.num_videos);
  data.labels.reserve(spec.num_videos);
  for (int v = 0; v < spec.num_videos; ++v) {
    const int t_len =
        spec.t_min + static_cast<int>(rng.bounded(spec.t_max - spec.t_min + 1));
    Matrix x(spec.d, t_len);
    for (int j = 0; j < spec.d; ++j)
      for (int t = 0; t < t_len; ++t) x(j, t) = spec.noise_std * rng.normal();
    Matrix z = Matrix::Zero(spec.num_classes, t_len);
    for (int e = 0; e < spec.events_per_video; ++e) {
      const int cls = static_cast<int>(rng.bounded(spec.num_classes));
      const int delay = spec.delays[cls];
      const int span = t_len - spec.trigger_duration - delay;
      const int t0 = static_cast<int>(rng.bounded(span + 1));
      for (int t = t0; t < t0 + spec.trigger_duration; ++t)
        x.col(t) += spec.trigger_gain * dirs.row(cls).transpose();
      for (int t = t0 + delay; t < t0 + delay + spec.trigger_duration; ++t) z(cls, t) = 1.0;
    }
    // snap to the on-disk 32-bit precision so in-memory and reloaded datasets
    // train identically
    x = x.unaryExpr([](double a) { return static_cast<double>(static_cast<float>(a)); });
    FeatureSequence seq = makeFeatureSequence(ChannelStack{std::move(x)});
    FrameLabels labels;
    labels.num_classes = spec.num_classes;
    labels.t = t_len;
    labels.z = std::move(z);
    data.features.push_back(std::move(seq));
    data.labels.push_back(std::move(labels));
  }
  return data;
}

void saveManifest(const std::string& path,
                  const std::vector<std::pair<std::string, std::string>>& pairs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [f, l] : pairs) arr.push_back({{"features", f}, {"labels", l}});
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << arr.dump(2) << '\n';
  if (!os) throw IoError("write failed for '" + path + "'");
}

std::vector<std::pair<std::string, std::string>> loadManifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  nlohmann::json arr;
  try {
    is >> arr;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest '" + path + "': " + e.what());
  }
  if (!arr.is_array()) throw ConfigError("manifest '" + path + "': expected a JSON array");
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& entry : arr) {
    if (!entry.is_object() || !entry.contains("features") || !entry.contains("labels"))
      throw ConfigError("manifest '" + path + "': entries need 'features' and 'labels'");
    for (const auto& [key, value] : entry.items()) {
      (void)value;
      if (key != "features" && key != "labels")
        throw ConfigError("manifest '" + path + "': unknown key '" + key + "'");
    }
    pairs.emplace_back(entry["features"].get<std::string>(),
                       entry["labels"].get<std::string>());
  }
  return pairs;
}

Dataset loadDataset(const std::string& manifest_path) {
  const auto pairs = loadManifest(manifest_path);
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  Dataset data;
  data.features.reserve(pairs.size());
  data.labels.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto resolve = [&base](const std::string& p) {
      const std::filesystem::path fp(p);
      return fp.is_absolute() ? fp.string() : (base / fp).string();
    };
    FeatureSequence seq = loadFeatures(resolve(pairs[i].first));
    FrameLabels labels = loadLabels(resolve(pairs[i].second));
    if (labels.t != seq.t)
      throw ConfigError("dataset entry " + std::to_string(i) + ": features have t=" +
                        std::to_string(seq.t) + " but labels have t=" +
                        std::to_string(labels.t));
    data.features.push_back(std::move(seq));
    data.labels.push_back(std::move(labels));
  }
  return data;
}

}  // namespace tgm
