#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace batchal {

// splitmix64 finalizer; derives independent stream seeds from a parent seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

// Thin wrapper over mt19937_64. The engine is fully specified by the
// standard, but the std:: distributions are not, so every draw goes through
// the helpers below to stay bit-reproducible across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform();

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

  // Standard normal via Box-Muller.
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      using std::swap;
      swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace batchal
