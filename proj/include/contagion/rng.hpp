#pragma once

#include <cstdint>
#include <random>

namespace contagion {

/// splitmix64 finalizer, used to derive independent engine seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Stream ids: ground truth under P, and the controlled filter under P-tilde.
inline constexpr std::uint64_t kTruthStream = 0;
inline constexpr std::uint64_t kControlStream = 1;

/// Random stream of one Monte Carlo path. The engine seed depends only on
/// (seed, path, stream), so results do not depend on scheduling.
class PathRng {
 public:
  PathRng(std::uint64_t seed, std::uint64_t path, std::uint64_t stream = 0)
      : engine_(splitmix64(splitmix64(splitmix64(seed) ^ path) ^ (stream * 0xd1342543de82ef95ULL))) {}

  double normal() { return normal_(engine_); }
  double exponential() { return exponential_(engine_); }
  double uniform() { return uniform_(engine_); }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::exponential_distribution<double> exponential_{1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace contagion
