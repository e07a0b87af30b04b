#include "jekyll/core/rng.hpp"

namespace jekyll {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t mix_seed(std::uint64_t seed, std::string_view stream) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : stream) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return mix_seed(seed, h);
}

RngContext seed_everything(std::uint64_t seed) { return RngContext(seed); }

}  // namespace jekyll
