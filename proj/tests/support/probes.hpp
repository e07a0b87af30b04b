#pragma once

#include <algorithm>
#include <array>
#include <random>

#include "jekyll/core/image.hpp"

namespace jekyll::testing {

// Colour anomaly: every pixel gets an independent random channel permutation.
inline ImageTensor channel_shuffle_probe(const ImageTensor& rgb, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int h = rgb.height(), w = rgb.width();
  std::vector<float> px(rgb.size());
  std::array<int, 3> perm{0, 1, 2};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::shuffle(perm.begin(), perm.end(), rng);
      for (int c = 0; c < 3; ++c)
        px[(static_cast<std::size_t>(c) * h + y) * w + x] = rgb.at(perm[c], y, x);
    }
  return ImageTensor(h, w, 3, px);
}

}  // namespace jekyll::testing
