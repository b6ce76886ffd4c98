#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dreid/rng.hpp"

namespace dreid::kernelforge {

/// Odd-sided square convolution kernel with nonnegative weights summing to 1.
class KernelGrid {
 public:
  /// Takes ownership of side*side row-major weights and checks invariants.
  KernelGrid(int side, std::vector<double> weights);

  /// Single-tap identity kernel of the given side.
  static KernelGrid delta(int side);

  int side() const noexcept { return side_; }
  int radius() const noexcept { return side_ / 2; }
  double at(int row, int col) const { return weights_[row * side_ + col]; }
  /// Weight at offset (dx, dy) from the center.
  double at_offset(int dx, int dy) const {
    return at(dy + radius(), dx + radius());
  }
  std::span<const double> weights() const noexcept { return weights_; }

  bool operator==(const KernelGrid&) const = default;

 private:
  int side_;
  std::vector<double> weights_;
};

enum class BlurFamily { Gaussian, GeneralizedGaussian, Motion, Defocus };

inline constexpr std::array<BlurFamily, 4> kAllBlurFamilies = {
    BlurFamily::Gaussian, BlurFamily::GeneralizedGaussian, BlurFamily::Motion,
    BlurFamily::Defocus};

std::string_view to_string(BlurFamily family);
/// Accepts "gaussian", "generalized-gaussian", "motion", "defocus".
BlurFamily parse_blur_family(std::string_view name);

struct GaussianBlurSpec {
  int side = 3;
  double sigma_x = 1.0;
  double sigma_y = 1.0;
  double theta = 0.0;
};

struct GeneralizedGaussianSpec {
  int side = 3;
  double sigma_x = 1.0;
  double sigma_y = 1.0;
  double beta = 1.0;
  double theta = 0.0;
  /// Per-weight multiplicative noise is drawn uniformly from this interval.
  double noise_low = 0.9;
  double noise_high = 1.1;
  bool noise_enabled = true;
};

/// Line kernel of `side` samples. The grid is 2*side-1 wide so that any
/// direction d in [-1,1] keeps the line inside it.
struct MotionBlurSpec {
  int side = 3;
  double theta = 0.0;
  double direction = 0.0;
  std::array<int, 2> shift = {0, 0};  // (dx, dy)
};

struct DefocusSpec {
  int radius = 3;
  double gauss_sigma = 0.1;
};

using BlurSpec = std::variant<GaussianBlurSpec, GeneralizedGaussianSpec,
                              MotionBlurSpec, DefocusSpec>;

BlurFamily family_of(const BlurSpec& spec);

/// Closed interval.
struct Range {
  double lo;
  double hi;
};

/// Sampling ranges for the four families. Defaults are the published
/// ranges; overrides may only narrow them.
struct KernelRanges {
  std::array<int, 2> gaussian_side = {3, 21};
  Range gaussian_sigma = {0.1, 2.8};
  std::array<int, 2> gg_side = {3, 21};
  Range gg_sigma = {0.5, 8.0};
  Range gg_beta = {0.5, 8.0};
  Range gg_noise = {0.9, 1.1};
  std::array<int, 2> motion_side = {3, 21};
  Range motion_direction = {-1.0, 1.0};
  std::array<int, 2> defocus_radius = {3, 21};
  Range defocus_sigma = {0.1, 0.5};

  /// Throws ParameterError when a range is inverted or leaves the defaults.
  void validate() const;
};

void validate(const GaussianBlurSpec& spec);
void validate(const GeneralizedGaussianSpec& spec);
void validate(const MotionBlurSpec& spec);
void validate(const DefocusSpec& spec);

KernelGrid make_gaussian_kernel(const GaussianBlurSpec& spec);
KernelGrid make_generalized_gaussian_kernel(const GeneralizedGaussianSpec& spec,
                                            SeededRng& rng);
KernelGrid make_motion_kernel(const MotionBlurSpec& spec);
KernelGrid make_defocus_kernel(const DefocusSpec& spec);

/// Builds the kernel for any family. `noise_seed` feeds the generalized
/// Gaussian kernel noise and is ignored by the other families.
KernelGrid make_kernel(const BlurSpec& spec, std::uint64_t noise_seed);

/// Side of the Gaussian smoothing kernel paired with a defocus disc.
int defocus_companion_side(int radius) noexcept;

/// Rounded (dx, dy) sample points of the unshifted motion line.
std::vector<std::array<int, 2>> motion_line_points(const MotionBlurSpec& spec);

BlurSpec sample_blur_spec(BlurFamily family, SeededRng& rng,
                          const KernelRanges& ranges = {});

/// "family side=.. key=.." one-line description.
std::string describe(const BlurSpec& spec);

}  // namespace dreid::kernelforge
