// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace tgm {

// All in-memory math is 64-bit; 32-bit exists only at the feature-file boundary.
using Scalar = double;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using Index = Eigen::Index;

// A C x D x T value stored as one D x T matrix per channel.
using ChannelStack = std::vector<Matrix>;

inline ChannelStack zerosLike(const ChannelStack& x) {
  ChannelStack out;
  out.reserve(x.size());
  for (const Matrix& m : x) out.emplace_back(Matrix::Zero(m.rows(), m.cols()));
  return out;
}

inline Index stackTime(const ChannelStack& x) { return x.empty() ? 0 : x.front().cols(); }
inline Index stackDim(const ChannelStack& x) { return x.empty() ? 0 : x.front().rows(); }

// Error taxonomy; the CLI maps these to exit codes 2 / 3 / 4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Malformed on-disk content (bad magic, truncation, illegal bytes).
struct FormatError : ConfigError {
  using ConfigError::ConfigError;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Contract misuse by the caller (e.g. backward without a forward cache).
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

// Deterministic RNG. All randomness flows from a single u64 seed through
// mt19937_64 with the fixed scalar transforms below, so a (seed, config)
// pair reproduces bit-identical streams on every platform:
//   uniform01: (x >> 11) * 2^-53                      in [0, 1)
//   normal:    Box-Muller on ((x >> 11) + 1) * 2^-53  (two draws per call)
//   bounded:   x % n
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  double normal() {
    const double u1 = static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Uniform integer in [0, n). Modulo bias is irrelevant at our scales but the
  // transform is part of the documented stream definition.
  std::int64_t bounded(std::int64_t n) {
    return static_cast<std::int64_t>(next() % static_cast<std::uint64_t>(n));
  }

 private:
  std::mt19937_64 engine_;
};

// Named substreams carved out of the master seed (splitmix64 finalizer).
enum class SeedStream : std::uint64_t {
  ModelInit = 1,
  SynthGen = 2,
  DatasetSplit = 3,
  EpochShuffle = 4,
  GradCheck = 5,
};

inline std::uint64_t deriveSeed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t deriveSeed(std::uint64_t seed, SeedStream stream) {
  return deriveSeed(seed, static_cast<std::uint64_t>(stream));
}

}  // namespace tgm
