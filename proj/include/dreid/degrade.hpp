#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "dreid/image.hpp"
#include "dreid/kernels.hpp"
#include "dreid/rng.hpp"

namespace dreid::degrade {

using kernelforge::KernelGrid;
using kernelforge::Range;

enum class DownscaleMethod { Nearest, Bilinear, Bicubic };

struct DownscaleSpec {
  int factor = 2;
  DownscaleMethod method = DownscaleMethod::Bilinear;
};

struct NoiseSpec {
  double sigma = 4e-3;
};

struct JpegSpec {
  int quality = 95;
};

enum class PipelineKind { Simple, Diverse, DiversePlus };

std::string_view to_string(DownscaleMethod method);
DownscaleMethod parse_downscale_method(std::string_view name);
/// "simple", "diverse", "diverse-plus".
std::string_view to_string(PipelineKind kind);
PipelineKind parse_pipeline_kind(std::string_view name);

// ---------------------------------------------------------------------------
// Elementary operations. All return new images clamped to [0,1].

/// Per-channel 2-D convolution with reflect-101 padding (dcb|abcd|cba).
Image convolve(const Image& img, const KernelGrid& kernel);

/// Shrinks both sides by `spec.factor`, sampling at (dst + 0.5) * f - 0.5.
/// Nearest takes the top-left of the samples closest to that coordinate.
/// No anti-aliasing prefilter.
Image downscale(const Image& img, DownscaleSpec spec);

/// Separable Catmull-Rom (a = -0.5) resampling to an arbitrary size with
/// the half-pixel convention; border taps are clamped.
Image resize_bicubic(const Image& img, int out_height, int out_width);

/// Square bicubic upscale; out_side must be >= both input sides.
Image upscale_bicubic(const Image& img, int out_side);

Image add_gaussian_noise(const Image& img, NoiseSpec spec, SeededRng& rng);

/// 8-bit quantize, JPEG encode at `spec.quality`, decode.
Image jpeg_compress(const Image& img, JpegSpec spec);

/// Nearest-neighbour downscale by `factor` then nearest upscale back.
Image final_resample(const Image& img, int factor);

// ---------------------------------------------------------------------------
// Operation traces.

struct BlurOp {
  kernelforge::BlurSpec spec;
  std::uint64_t seed = 0;  // kernel-noise seed (generalized Gaussian only)
};
struct DownscaleOp {
  DownscaleSpec spec;
};
struct NoiseOp {
  NoiseSpec spec;
  std::uint64_t seed = 0;
};
struct JpegOp {
  JpegSpec spec;
};
/// Bicubic resize back to a square side.
struct ResizeOp {
  int side = kPipelineSide;
};
struct ResampleOp {
  int factor = 2;
};

using TraceOp =
    std::variant<BlurOp, DownscaleOp, NoiseOp, JpegOp, ResizeOp, ResampleOp>;

/// "blur", "downscale", "noise", "jpeg", "resize", "resample".
std::string_view op_name(const TraceOp& op);

/// Fully resolved sequence of operations; replaying it is bit-exact.
struct OpTrace {
  std::vector<TraceOp> ops;
};

Image apply_op(const Image& img, const TraceOp& op);
Image replay(const Image& img, const OpTrace& trace);

/// Parameter ranges used when sampling pipelines. Defaults are the
/// published ranges; overrides may only narrow them.
struct PipelineRanges {
  kernelforge::KernelRanges kernels;
  Range noise_sigma = {4e-3, 1e-2};
  std::array<int, 2> jpeg_quality = {30, 95};

  void validate() const;
};

/// Reads a JSON object whose keys mirror PipelineRanges; absent keys keep
/// their defaults.
PipelineRanges load_pipeline_ranges(const std::filesystem::path& path);

/// Samples a pipeline's operations without touching pixels.
OpTrace plan_pipeline(PipelineKind kind, SeededRng& rng,
                      const PipelineRanges& ranges = {});

/// Plans and applies a pipeline to a 384x384 image.
std::pair<Image, OpTrace> apply_pipeline(const Image& img, PipelineKind kind,
                                         SeededRng& rng,
                                         const PipelineRanges& ranges = {});

struct PipelineResult {
  Image image;
  OpTrace trace;
  std::uint64_t sub_seed = 0;
};

/// Sub-seed of one image: a stable hash of (global seed, image id).
std::uint64_t image_sub_seed(std::uint64_t seed, std::string_view image_id);

/// Applies a pipeline to every image with per-image sub-seeds. The result is
/// independent of `workers`.
std::vector<PipelineResult> apply_pipeline_batch(
    std::span<const Image> images, std::span<const std::string> image_ids,
    PipelineKind kind, std::uint64_t seed, int workers,
    const PipelineRanges& ranges = {});

}  // namespace dreid::degrade
