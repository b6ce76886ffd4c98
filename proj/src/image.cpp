#include "dreid/image.hpp"

#include <algorithm>
#include <string>

#include "dreid/errors.hpp"

namespace dreid {

Image::Image(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  if (height <= 0 || width <= 0) {
    throw ParameterError("image dimensions must be positive, got " +
                         std::to_string(height) + "x" + std::to_string(width));
  }
  if (channels != 1 && channels != 3) {
    throw ParameterError("image must have 1 or 3 channels, got " +
                         std::to_string(channels));
  }
  samples_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

void Image::clamp01() {
  for (double& v : samples_) v = std::clamp(v, 0.0, 1.0);
}

}  // namespace dreid
