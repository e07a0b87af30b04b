#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace jekyll {

// SplitMix64 finalizer, used to derive independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);
std::uint64_t mix_seed(std::uint64_t seed, std::string_view stream);

/// Root of all stochastic draws in one run. Single owner; not thread-safe.
class RngContext {
 public:
  explicit RngContext(std::uint64_t seed) : seed_(seed), engine_(mix_seed(seed, 0)) {}

  std::uint64_t seed() const { return seed_; }
  std::mt19937_64& engine() { return engine_; }
  std::uint64_t next() { return engine_(); }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  // Independent context for a named sub-task; does not advance this context.
  RngContext derive(std::string_view stream) const { return RngContext(mix_seed(seed_, stream)); }
  RngContext derive(std::uint64_t stream) const { return RngContext(mix_seed(seed_, stream)); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

RngContext seed_everything(std::uint64_t seed);

}  // namespace jekyll
