#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace ota {

/// Seedable generator with platform-independent draws.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. The distributions below are implemented here rather than taken
/// from <random>, whose distribution algorithms are implementation-defined:
///   - uniform_int(lo, hi): inclusive, rejection sampling
///     (draw 64 bits, keep the low ceil(log2(range)) bits, reject >= range).
///   - uniform_real(): 53 high bits scaled to [0,1).
///   - normal(): Box-Muller, cosine branch only (no cached second value).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double uniform_real();
  double normal();

  /// Fisher-Yates, walking from the back.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// k distinct indices from [0, n), in draw order (partial Fisher-Yates).
  std::vector<std::size_t> choose(std::size_t n, std::size_t k);

 private:
  std::mt19937_64 engine_;
};

std::uint64_t fnv1a(std::string_view bytes);
std::uint64_t splitmix64(std::uint64_t x);

/// Independent stream seed for one keyed item under a global seed.
inline std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view key) {
  return splitmix64(global_seed ^ splitmix64(fnv1a(key)));
}

}  // namespace ota
