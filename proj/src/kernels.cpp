#include "dreid/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "dreid/errors.hpp"

namespace dreid::kernelforge {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
const KernelRanges kPublishedRanges{};

void require(bool ok, const std::string& message) {
  if (!ok) throw ParameterError(message);
}

bool within(double v, Range r) { return v >= r.lo && v <= r.hi; }

void require_odd_side(int side, std::array<int, 2> bounds, const char* what) {
  require(side % 2 == 1 && side >= bounds[0] && side <= bounds[1],
          std::string(what) + " must be odd in [" + std::to_string(bounds[0]) +
              "," + std::to_string(bounds[1]) + "], got " +
              std::to_string(side));
}

void require_theta(double theta) {
  require(theta >= 0.0 && theta < kTwoPi,
          "theta must lie in [0, 2pi), got " + std::to_string(theta));
}

void require_range(double v, Range r, const char* what) {
  require(within(v, r), std::string(what) + " out of range [" +
                            std::to_string(r.lo) + "," + std::to_string(r.hi) +
                            "]: " + std::to_string(v));
}

// Quadratic form C^T R^T Sigma^-1 R C evaluated on the (2r+1)^2 lattice.
std::vector<double> rotated_quadratic_form(int side, double sigma_x,
                                           double sigma_y, double theta) {
  const int r = side / 2;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const double inv_x = 1.0 / (sigma_x * sigma_x);
  const double inv_y = 1.0 / (sigma_y * sigma_y);
  std::vector<double> q(static_cast<std::size_t>(side) * side);
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const double u = c * dx - s * dy;
      const double v = s * dx + c * dy;
      q[(dy + r) * side + (dx + r)] = u * u * inv_x + v * v * inv_y;
    }
  }
  return q;
}

std::vector<double> normalized(std::vector<double> w) {
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw ParameterError("kernel has no positive mass");
  }
  for (double& v : w) v /= total;
  return w;
}

int sample_odd(SeededRng& rng, std::array<int, 2> bounds) {
  const int lo = bounds[0] % 2 == 1 ? bounds[0] : bounds[0] + 1;
  const int hi = bounds[1] % 2 == 1 ? bounds[1] : bounds[1] - 1;
  return lo + 2 * static_cast<int>(rng.uniform_int(0, (hi - lo) / 2));
}

double sample(SeededRng& rng, Range r) { return rng.uniform(r.lo, r.hi); }

}  // namespace

KernelGrid::KernelGrid(int side, std::vector<double> weights)
    : side_(side), weights_(std::move(weights)) {
  require(side >= 1 && side % 2 == 1,
          "kernel side must be odd, got " + std::to_string(side));
  require(weights_.size() == static_cast<std::size_t>(side) * side,
          "kernel weight count does not match side");
  double total = 0.0;
  for (double w : weights_) {
    require(w >= 0.0 && std::isfinite(w), "kernel weights must be >= 0");
    total += w;
  }
  require(std::abs(total - 1.0) <= 1e-9, "kernel weights must sum to 1");
}

KernelGrid KernelGrid::delta(int side) {
  std::vector<double> w(static_cast<std::size_t>(side) * side, 0.0);
  w[w.size() / 2] = 1.0;
  return KernelGrid(side, std::move(w));
}

std::string_view to_string(BlurFamily family) {
  switch (family) {
    case BlurFamily::Gaussian:
      return "gaussian";
    case BlurFamily::GeneralizedGaussian:
      return "generalized-gaussian";
    case BlurFamily::Motion:
      return "motion";
    case BlurFamily::Defocus:
      return "defocus";
  }
  return "unknown";
}

BlurFamily parse_blur_family(std::string_view name) {
  for (BlurFamily f : kAllBlurFamilies) {
    if (to_string(f) == name) return f;
  }
  throw ParameterError("unknown blur family '" + std::string(name) + "'");
}

BlurFamily family_of(const BlurSpec& spec) {
  return static_cast<BlurFamily>(spec.index());
}

void KernelRanges::validate() const {
  const auto& d = kPublishedRanges;
  auto check_sides = [](std::array<int, 2> v, std::array<int, 2> lim,
                        const char* what) {
    require(v[0] <= v[1] && v[0] >= lim[0] && v[1] <= lim[1],
            std::string(what) + " range must lie within the default range");
  };
  auto check = [](Range v, Range lim, const char* what) {
    require(v.lo <= v.hi && v.lo >= lim.lo && v.hi <= lim.hi,
            std::string(what) + " range must lie within the default range");
  };
  check_sides(gaussian_side, d.gaussian_side, "gaussian_side");
  check(gaussian_sigma, d.gaussian_sigma, "gaussian_sigma");
  check_sides(gg_side, d.gg_side, "gg_side");
  check(gg_sigma, d.gg_sigma, "gg_sigma");
  check(gg_beta, d.gg_beta, "gg_beta");
  check(gg_noise, d.gg_noise, "gg_noise");
  check_sides(motion_side, d.motion_side, "motion_side");
  check(motion_direction, d.motion_direction, "motion_direction");
  check_sides(defocus_radius, d.defocus_radius, "defocus_radius");
  check(defocus_sigma, d.defocus_sigma, "defocus_sigma");
  // Each odd-side range must contain at least one odd value.
  for (auto s : {gaussian_side, gg_side, motion_side}) {
    require(s[0] % 2 == 1 || s[0] < s[1], "side range holds no odd value");
  }
}

void validate(const GaussianBlurSpec& spec) {
  const auto& d = kPublishedRanges;
  require_odd_side(spec.side, d.gaussian_side, "gaussian side");
  require_range(spec.sigma_x, d.gaussian_sigma, "gaussian sigma_x");
  require_range(spec.sigma_y, d.gaussian_sigma, "gaussian sigma_y");
  require_theta(spec.theta);
}

void validate(const GeneralizedGaussianSpec& spec) {
  const auto& d = kPublishedRanges;
  require_odd_side(spec.side, d.gg_side, "generalized gaussian side");
  require_range(spec.sigma_x, d.gg_sigma, "generalized gaussian sigma_x");
  require_range(spec.sigma_y, d.gg_sigma, "generalized gaussian sigma_y");
  require_range(spec.beta, d.gg_beta, "generalized gaussian beta");
  require_theta(spec.theta);
  require(spec.noise_low <= spec.noise_high &&
              within(spec.noise_low, d.gg_noise) &&
              within(spec.noise_high, d.gg_noise),
          "kernel noise interval must lie within [0.9, 1.1]");
}

std::vector<std::array<int, 2>> motion_line_points(const MotionBlurSpec& spec) {
  const int k = spec.side;
  const double half = (k - 1) / 2.0;
  const double ux = std::cos(spec.theta);
  const double uy = std::sin(spec.theta);
  std::vector<std::array<int, 2>> points;
  points.reserve(k);
  for (int n = 0; n < k; ++n) {
    // t_n = t_-(d) + n/(k-1) (t_+(d) - t_-(d)) with t_+ - t_- = k - 1,
    // written around the line midpoint so d = 0 is exactly symmetric.
    const double t = (n - half) + spec.direction * half;
    points.push_back({static_cast<int>(std::round(t * ux)),
                      static_cast<int>(std::round(t * uy))});
  }
  return points;
}

void validate(const MotionBlurSpec& spec) {
  const auto& d = kPublishedRanges;
  require_odd_side(spec.side, d.motion_side, "motion side");
  require_theta(spec.theta);
  require_range(spec.direction, d.motion_direction, "motion direction");
  const int reach = spec.side - 1;
  for (auto [x, y] : motion_line_points(spec)) {
    x += spec.shift[0];
    y += spec.shift[1];
    require(std::abs(x) <= reach && std::abs(y) <= reach,
            "motion line leaves the kernel grid after shift (" +
                std::to_string(spec.shift[0]) + "," +
                std::to_string(spec.shift[1]) + ")");
  }
}

void validate(const DefocusSpec& spec) {
  const auto& d = kPublishedRanges;
  require(spec.radius >= d.defocus_radius[0] &&
              spec.radius <= d.defocus_radius[1],
          "defocus radius must lie in [3,21], got " +
              std::to_string(spec.radius));
  require_range(spec.gauss_sigma, d.defocus_sigma, "defocus gauss_sigma");
}

KernelGrid make_gaussian_kernel(const GaussianBlurSpec& spec) {
  validate(spec);
  auto q = rotated_quadratic_form(spec.side, spec.sigma_x, spec.sigma_y,
                                  spec.theta);
  for (double& v : q) v = std::exp(-0.5 * v);
  return KernelGrid(spec.side, normalized(std::move(q)));
}

KernelGrid make_generalized_gaussian_kernel(const GeneralizedGaussianSpec& spec,
                                            SeededRng& rng) {
  validate(spec);
  auto w = rotated_quadratic_form(spec.side, spec.sigma_x, spec.sigma_y,
                                  spec.theta);
  for (double& v : w) v = std::exp(-0.5 * std::pow(v, spec.beta));
  if (spec.noise_enabled) {
    for (double& v : w) {
      v *= rng.uniform(spec.noise_low, spec.noise_high);
      v = std::max(v, 0.0);
    }
  }
  return KernelGrid(spec.side, normalized(std::move(w)));
}

KernelGrid make_motion_kernel(const MotionBlurSpec& spec) {
  validate(spec);
  const int reach = spec.side - 1;
  const int grid = 2 * reach + 1;
  std::vector<double> w(static_cast<std::size_t>(grid) * grid, 0.0);
  const double tap = 1.0 / spec.side;
  for (auto [x, y] : motion_line_points(spec)) {
    x += spec.shift[0] + reach;
    y += spec.shift[1] + reach;
    w[y * grid + x] += tap;
  }
  return KernelGrid(grid, normalized(std::move(w)));
}

int defocus_companion_side(int radius) noexcept { return radius <= 8 ? 3 : 5; }

KernelGrid make_defocus_kernel(const DefocusSpec& spec) {
  validate(spec);
  const int r = spec.radius;
  const int disc_side = 2 * r + 1;
  const double level = 1.0 / (std::numbers::pi * r * r);
  std::vector<double> disc(static_cast<std::size_t>(disc_side) * disc_side);
  for (int y = -r; y <= r; ++y) {
    for (int x = -r; x <= r; ++x) {
      disc[(y + r) * disc_side + (x + r)] = x * x + y * y <= r * r ? level : 0;
    }
  }
  const int gs = defocus_companion_side(r);
  const KernelGrid gauss = make_gaussian_kernel(
      {.side = gs, .sigma_x = spec.gauss_sigma, .sigma_y = spec.gauss_sigma,
       .theta = 0.0});

  // Full 2-D convolution of the disc with the companion Gaussian.
  const int side = disc_side + gs - 1;
  std::vector<double> out(static_cast<std::size_t>(side) * side, 0.0);
  for (int dy = 0; dy < disc_side; ++dy) {
    for (int dx = 0; dx < disc_side; ++dx) {
      const double a = disc[dy * disc_side + dx];
      if (a == 0.0) continue;
      for (int gy = 0; gy < gs; ++gy) {
        for (int gx = 0; gx < gs; ++gx) {
          out[(dy + gy) * side + (dx + gx)] += a * gauss.at(gy, gx);
        }
      }
    }
  }
  return KernelGrid(side, normalized(std::move(out)));
}

KernelGrid make_kernel(const BlurSpec& spec, std::uint64_t noise_seed) {
  return std::visit(
      [noise_seed](const auto& s) -> KernelGrid {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, GaussianBlurSpec>) {
          return make_gaussian_kernel(s);
        } else if constexpr (std::is_same_v<T, GeneralizedGaussianSpec>) {
          SeededRng rng(noise_seed);
          return make_generalized_gaussian_kernel(s, rng);
        } else if constexpr (std::is_same_v<T, MotionBlurSpec>) {
          return make_motion_kernel(s);
        } else {
          return make_defocus_kernel(s);
        }
      },
      spec);
}

BlurSpec sample_blur_spec(BlurFamily family, SeededRng& rng,
                          const KernelRanges& ranges) {
  switch (family) {
    case BlurFamily::Gaussian: {
      GaussianBlurSpec s;
      s.side = sample_odd(rng, ranges.gaussian_side);
      s.sigma_x = sample(rng, ranges.gaussian_sigma);
      s.sigma_y = sample(rng, ranges.gaussian_sigma);
      s.theta = rng.uniform(0.0, kTwoPi);
      return s;
    }
    case BlurFamily::GeneralizedGaussian: {
      GeneralizedGaussianSpec s;
      s.side = sample_odd(rng, ranges.gg_side);
      s.sigma_x = sample(rng, ranges.gg_sigma);
      s.sigma_y = sample(rng, ranges.gg_sigma);
      s.beta = sample(rng, ranges.gg_beta);
      s.theta = rng.uniform(0.0, kTwoPi);
      s.noise_low = ranges.gg_noise.lo;
      s.noise_high = ranges.gg_noise.hi;
      s.noise_enabled = true;
      return s;
    }
    case BlurFamily::Motion: {
      MotionBlurSpec s;
      s.side = sample_odd(rng, ranges.motion_side);
      s.theta = rng.uniform(0.0, kTwoPi);
      s.direction = sample(rng, ranges.motion_direction);
      const int reach = s.side - 1;
      int min_x = reach, max_x = -reach, min_y = reach, max_y = -reach;
      for (auto [x, y] : motion_line_points(s)) {
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x);
        min_y = std::min(min_y, y);
        max_y = std::max(max_y, y);
      }
      s.shift[0] =
          static_cast<int>(rng.uniform_int(-reach - min_x, reach - max_x));
      s.shift[1] =
          static_cast<int>(rng.uniform_int(-reach - min_y, reach - max_y));
      return s;
    }
    case BlurFamily::Defocus: {
      DefocusSpec s;
      s.radius = static_cast<int>(
          rng.uniform_int(ranges.defocus_radius[0], ranges.defocus_radius[1]));
      s.gauss_sigma = sample(rng, ranges.defocus_sigma);
      return s;
    }
  }
  throw ParameterError("unknown blur family");
}

std::string describe(const BlurSpec& spec) {
  std::ostringstream os;
  os.precision(17);
  os << to_string(family_of(spec));
  std::visit(
      [&os](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, GaussianBlurSpec>) {
          os << " side=" << s.side << " sigma_x=" << s.sigma_x
             << " sigma_y=" << s.sigma_y << " theta=" << s.theta;
        } else if constexpr (std::is_same_v<T, GeneralizedGaussianSpec>) {
          os << " side=" << s.side << " sigma_x=" << s.sigma_x
             << " sigma_y=" << s.sigma_y << " beta=" << s.beta
             << " theta=" << s.theta << " noise=" << (s.noise_enabled ? 1 : 0)
             << " noise_low=" << s.noise_low << " noise_high=" << s.noise_high;
        } else if constexpr (std::is_same_v<T, MotionBlurSpec>) {
          os << " side=" << s.side << " theta=" << s.theta
             << " direction=" << s.direction << " shift_x=" << s.shift[0]
             << " shift_y=" << s.shift[1];
        } else {
          os << " radius=" << s.radius << " gauss_sigma=" << s.gauss_sigma;
        }
      },
      spec);
  return os.str();
}

}  // namespace dreid::kernelforge
