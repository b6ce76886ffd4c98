#pragma once

#include <cmath>
#include <cstdint>

#include "dreid/image.hpp"
#include "dreid/rng.hpp"

namespace dreid::testing {

/// Uniform random samples.
inline Image random_image(int h, int w, int c, std::uint64_t seed) {
  Image img(h, w, c);
  SeededRng rng(seed);
  for (double& v : img.samples()) v = rng.uniform01();
  return img;
}

/// Smooth gradients, a few oscillations and hard edges; stands in for a
/// photograph in codec and pipeline tests.
inline Image natural_image(int h, int w, int c, std::uint64_t seed) {
  Image img(h, w, c);
  SeededRng rng(seed);
  const double fx = rng.uniform(0.02, 0.08), fy = rng.uniform(0.02, 0.08);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        double v = 0.35 + 0.25 * std::sin(fx * x + 0.7 * ch) *
                              std::cos(fy * y - 0.3 * ch);
        v += 0.15 * (x > w / 3 && y < 2 * h / 3 ? 1.0 : 0.0);
        v += 0.1 * std::sin(0.9 * x + 0.4 * y);
        img.at(y, x, ch) = v;
      }
    }
  }
  img.clamp01();
  return img;
}

}  // namespace dreid::testing
