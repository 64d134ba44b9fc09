#pragma once

#include <cstdint>
#include <random>

namespace gmeta {

/// SplitMix64 finalizer; used to derive independent substream seeds.
std::uint64_t splitmix64(std::uint64_t x);

/// Reproducible random stream keyed by (seed, stream). Each Monte Carlo
/// replicate owns its stream, so results do not depend on which thread runs
/// it or in which order.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t stream);

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  bool bernoulli(double p) { return uniform() < p; }
  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace gmeta
