// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

namespace dysi {

// Counter-free deterministic PRNG (xoshiro256** seeded via splitmix64).
//
// Every consumer of randomness takes an explicit Rng so results are a pure
// function of (seed, stream). Streams are cheap: derive one per purpose
// (init / data order / dropout / scheduler / sampling) and per step or
// prompt, so a run can be resumed or parallelized without shared state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53 random bits.
  double uniform_double();
  // Uniform in [lo, hi); degenerate ranges return lo.
  double uniform_double(double lo, double hi);
  float uniform_float();

  // Uniform integer in [0, n) by rejection; n must be positive.
  std::uint64_t uniform_int(std::uint64_t n);

  // Standard normal via Box-Muller with a cached spare.
  double normal();
  double normal(double mean, double stddev);

  bool bernoulli(double p_true);

  // In-place Fisher-Yates shuffle.
  template <class T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i + 1));
      std::swap(v[i], v[j]);
    }
  }

  // Stable mix of a stream tag and an index (step, epoch, prompt, ...),
  // used to spawn independent per-unit streams from one run seed.
  static std::uint64_t mix(std::uint64_t tag, std::uint64_t index);

 private:
  std::uint64_t state_[4];
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

// Fixed stream tags for the training pipeline. Keeping them in one place
// guarantees two objectives that share a code path also share draws.
namespace rng_stream {
inline constexpr std::uint64_t kInit = 0x01;
inline constexpr std::uint64_t kDataOrder = 0x02;
inline constexpr std::uint64_t kDropout = 0x03;
inline constexpr std::uint64_t kScheduler = 0x04;
inline constexpr std::uint64_t kSampling = 0x05;
inline constexpr std::uint64_t kCorpus = 0x06;
}  // namespace rng_stream

}  // namespace dysi
