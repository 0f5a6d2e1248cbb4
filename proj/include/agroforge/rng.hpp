#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace agroforge {

// Seeded generator whose outputs are identical on every platform.
// std::mt19937_64's raw stream is fixed by the standard; the standard
// distributions and std::shuffle are not, so bounded draws and shuffles are
// implemented here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Independent stream for (seed, tag), e.g. one per class or per record.
  static Rng derived(std::uint64_t seed, std::string_view tag);
  static std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

  std::uint64_t next() { return engine_(); }

  // Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices from [0, n) in draw order (partial Fisher-Yates).
  std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k);

 private:
  std::mt19937_64 engine_;
};

}  // namespace agroforge
