#include "dreid/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "dreid/codec.hpp"
#include "dreid/errors.hpp"
#include "dreid/parallel.hpp"

namespace dreid::degrade {
namespace {

int reflect101(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

double cubic_weight(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

struct Tap {
  int index;
  double weight;
};

// Interpolation taps for every destination index along one axis.
std::vector<std::vector<Tap>> axis_taps(int in_size, int out_size,
                                        DownscaleMethod method) {
  const double scale = static_cast<double>(in_size) / out_size;
  std::vector<std::vector<Tap>> taps(out_size);
  for (int dst = 0; dst < out_size; ++dst) {
    const double src = (dst + 0.5) * scale - 0.5;
    const int base = static_cast<int>(std::floor(src));
    const double frac = src - base;
    auto& t = taps[dst];
    if (method == DownscaleMethod::Bilinear) {
      t.push_back({std::clamp(base, 0, in_size - 1), 1.0 - frac});
      t.push_back({std::clamp(base + 1, 0, in_size - 1), frac});
    } else {
      for (int m = -1; m <= 2; ++m) {
        t.push_back({std::clamp(base + m, 0, in_size - 1),
                     cubic_weight(m - frac)});
      }
    }
  }
  return taps;
}

Image separable_resample(const Image& img, int out_h, int out_w,
                         DownscaleMethod method) {
  const int c = img.channels();
  const auto htaps = axis_taps(img.width(), out_w, method);
  const auto vtaps = axis_taps(img.height(), out_h, method);
  Image tmp(img.height(), out_w, c);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < out_w; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (const Tap& t : htaps[x]) acc += t.weight * img.at(y, t.index, ch);
        tmp.at(y, x, ch) = acc;
      }
    }
  }
  Image out(out_h, out_w, c);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (const Tap& t : vtaps[y]) acc += t.weight * tmp.at(t.index, x, ch);
        out.at(y, x, ch) = acc;
      }
    }
  }
  out.clamp01();
  return out;
}

void require_divisible(const Image& img, int factor) {
  if (factor != 2 && factor != 4) {
    throw ParameterError("scale factor must be 2 or 4, got " +
                         std::to_string(factor));
  }
  if (img.height() % factor != 0 || img.width() % factor != 0) {
    throw ParameterError("factor " + std::to_string(factor) +
                         " does not divide image size " +
                         std::to_string(img.height()) + "x" +
                         std::to_string(img.width()));
  }
}

Image nearest_downscale(const Image& img, int factor) {
  const int offset = (factor - 1) / 2;
  Image out(img.height() / factor, img.width() / factor, img.channels());
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      for (int ch = 0; ch < img.channels(); ++ch) {
        out.at(y, x, ch) =
            img.at(y * factor + offset, x * factor + offset, ch);
      }
    }
  }
  return out;
}

Image nearest_upscale(const Image& img, int factor) {
  Image out(img.height() * factor, img.width() * factor, img.channels());
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      for (int ch = 0; ch < img.channels(); ++ch) {
        out.at(y, x, ch) = img.at(y / factor, x / factor, ch);
      }
    }
  }
  return out;
}

DownscaleOp downscale_choice(int index) {
  return {{.factor = index < 2 ? 2 : 4,
           .method = index % 2 == 0 ? DownscaleMethod::Bilinear
                                    : DownscaleMethod::Nearest}};
}

BlurOp sample_blur(kernelforge::BlurFamily family, SeededRng& rng,
                   const PipelineRanges& ranges) {
  BlurOp op;
  op.spec = kernelforge::sample_blur_spec(family, rng, ranges.kernels);
  op.seed = rng.next_u64();
  return op;
}

NoiseOp sample_noise(SeededRng& rng, const PipelineRanges& ranges) {
  NoiseOp op;
  op.spec.sigma = rng.uniform(ranges.noise_sigma.lo, ranges.noise_sigma.hi);
  op.seed = rng.next_u64();
  return op;
}

JpegOp sample_jpeg(SeededRng& rng, const PipelineRanges& ranges) {
  return {{static_cast<int>(
      rng.uniform_int(ranges.jpeg_quality[0], ranges.jpeg_quality[1]))}};
}

ResampleOp sample_resample(SeededRng& rng) {
  return {rng.uniform_int(0, 1) == 0 ? 2 : 4};
}

}  // namespace

std::string_view to_string(DownscaleMethod method) {
  switch (method) {
    case DownscaleMethod::Nearest:
      return "nearest";
    case DownscaleMethod::Bilinear:
      return "bilinear";
    case DownscaleMethod::Bicubic:
      return "bicubic";
  }
  return "unknown";
}

DownscaleMethod parse_downscale_method(std::string_view name) {
  for (auto m : {DownscaleMethod::Nearest, DownscaleMethod::Bilinear,
                 DownscaleMethod::Bicubic}) {
    if (to_string(m) == name) return m;
  }
  throw ParameterError("unknown downscale method '" + std::string(name) + "'");
}

std::string_view to_string(PipelineKind kind) {
  switch (kind) {
    case PipelineKind::Simple:
      return "simple";
    case PipelineKind::Diverse:
      return "diverse";
    case PipelineKind::DiversePlus:
      return "diverse-plus";
  }
  return "unknown";
}

PipelineKind parse_pipeline_kind(std::string_view name) {
  for (auto k : {PipelineKind::Simple, PipelineKind::Diverse,
                 PipelineKind::DiversePlus}) {
    if (to_string(k) == name) return k;
  }
  throw ParameterError("unknown pipeline '" + std::string(name) + "'");
}

Image convolve(const Image& img, const KernelGrid& kernel) {
  const int side = kernel.side();
  if (side > img.height() || side > img.width()) {
    throw ParameterError("kernel side " + std::to_string(side) +
                         " exceeds image size " + std::to_string(img.height()) +
                         "x" + std::to_string(img.width()));
  }
  const int r = kernel.radius();
  const int h = img.height();
  const int w = img.width();
  const int c = img.channels();
  const int pw = w + 2 * r;
  const int ph = h + 2 * r;

  struct KernelTap {
    int row, col;
    double weight;
  };
  std::vector<KernelTap> taps;
  for (int a = 0; a < side; ++a) {
    for (int b = 0; b < side; ++b) {
      if (kernel.at(a, b) != 0.0) taps.push_back({a, b, kernel.at(a, b)});
    }
  }

  Image out(h, w, c);
  std::vector<double> padded(static_cast<std::size_t>(pw) * ph);
  std::vector<double> acc(w);
  for (int ch = 0; ch < c; ++ch) {
    for (int py = 0; py < ph; ++py) {
      const int sy = reflect101(py - r, h);
      for (int px = 0; px < pw; ++px) {
        padded[static_cast<std::size_t>(py) * pw + px] =
            img.at(sy, reflect101(px - r, w), ch);
      }
    }
    // out(y,x) = sum_{a,b} K(a,b) in(y - (a-r), x - (b-r))
    for (int y = 0; y < h; ++y) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (const KernelTap& t : taps) {
        const double* src = padded.data() +
                            static_cast<std::size_t>(y - t.row + 2 * r) * pw +
                            (2 * r - t.col);
        const double wt = t.weight;
        for (int x = 0; x < w; ++x) acc[x] += wt * src[x];
      }
      for (int x = 0; x < w; ++x) out.at(y, x, ch) = acc[x];
    }
  }
  out.clamp01();
  return out;
}

Image downscale(const Image& img, DownscaleSpec spec) {
  require_divisible(img, spec.factor);
  const int oh = img.height() / spec.factor;
  const int ow = img.width() / spec.factor;
  if (spec.method == DownscaleMethod::Nearest) {
    return nearest_downscale(img, spec.factor);
  }
  return separable_resample(img, oh, ow, spec.method);
}

Image resize_bicubic(const Image& img, int out_height, int out_width) {
  if (out_height <= 0 || out_width <= 0) {
    throw ParameterError("resize target must be positive");
  }
  return separable_resample(img, out_height, out_width,
                            DownscaleMethod::Bicubic);
}

Image upscale_bicubic(const Image& img, int out_side) {
  if (out_side < img.height() || out_side < img.width()) {
    throw ParameterError("upscale target " + std::to_string(out_side) +
                         " is smaller than the image");
  }
  return resize_bicubic(img, out_side, out_side);
}

Image add_gaussian_noise(const Image& img, NoiseSpec spec, SeededRng& rng) {
  if (!(spec.sigma >= 0.0) || !std::isfinite(spec.sigma)) {
    throw ParameterError("noise sigma must be finite and >= 0");
  }
  Image out = img;
  for (double& v : out.samples()) v += spec.sigma * rng.normal();
  out.clamp01();
  return out;
}

Image jpeg_compress(const Image& img, JpegSpec spec) {
  if (spec.quality < 30 || spec.quality > 95) {
    throw ParameterError("JPEG quality must lie in [30,95], got " +
                         std::to_string(spec.quality));
  }
  return codec::decode_jpeg(codec::encode_jpeg(img, spec.quality));
}

Image final_resample(const Image& img, int factor) {
  require_divisible(img, factor);
  return nearest_upscale(nearest_downscale(img, factor), factor);
}

std::string_view op_name(const TraceOp& op) {
  static constexpr std::string_view names[] = {
      "blur", "downscale", "noise", "jpeg", "resize", "resample"};
  return names[op.index()];
}

Image apply_op(const Image& img, const TraceOp& op) {
  return std::visit(
      [&img](const auto& o) -> Image {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, BlurOp>) {
          return convolve(img, kernelforge::make_kernel(o.spec, o.seed));
        } else if constexpr (std::is_same_v<T, DownscaleOp>) {
          return downscale(img, o.spec);
        } else if constexpr (std::is_same_v<T, NoiseOp>) {
          SeededRng rng(o.seed);
          return add_gaussian_noise(img, o.spec, rng);
        } else if constexpr (std::is_same_v<T, JpegOp>) {
          return jpeg_compress(img, o.spec);
        } else if constexpr (std::is_same_v<T, ResizeOp>) {
          return resize_bicubic(img, o.side, o.side);
        } else {
          return final_resample(img, o.factor);
        }
      },
      op);
}

Image replay(const Image& img, const OpTrace& trace) {
  Image current = img;
  for (const TraceOp& op : trace.ops) current = apply_op(current, op);
  return current;
}

void PipelineRanges::validate() const {
  kernels.validate();
  if (!(noise_sigma.lo <= noise_sigma.hi && noise_sigma.lo >= 4e-3 &&
        noise_sigma.hi <= 1e-2)) {
    throw ParameterError("noise_sigma range must lie within [4e-3, 1e-2]");
  }
  if (!(jpeg_quality[0] <= jpeg_quality[1] && jpeg_quality[0] >= 30 &&
        jpeg_quality[1] <= 95)) {
    throw ParameterError("jpeg_quality range must lie within [30, 95]");
  }
}

PipelineRanges load_pipeline_ranges(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError("malformed config " + path.string() + ": " + e.what());
  }
  PipelineRanges r;
  auto range = [&j](const char* key, Range& out) {
    if (j.contains(key)) out = {j[key].at(0).get<double>(), j[key].at(1).get<double>()};
  };
  auto ints = [&j](const char* key, std::array<int, 2>& out) {
    if (j.contains(key)) out = {j[key].at(0).get<int>(), j[key].at(1).get<int>()};
  };
  try {
    ints("gaussian_side", r.kernels.gaussian_side);
    range("gaussian_sigma", r.kernels.gaussian_sigma);
    ints("gg_side", r.kernels.gg_side);
    range("gg_sigma", r.kernels.gg_sigma);
    range("gg_beta", r.kernels.gg_beta);
    range("gg_noise", r.kernels.gg_noise);
    ints("motion_side", r.kernels.motion_side);
    range("motion_direction", r.kernels.motion_direction);
    ints("defocus_radius", r.kernels.defocus_radius);
    range("defocus_sigma", r.kernels.defocus_sigma);
    range("noise_sigma", r.noise_sigma);
    ints("jpeg_quality", r.jpeg_quality);
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError("bad range in " + path.string() + ": " + e.what());
  }
  r.validate();
  return r;
}

OpTrace plan_pipeline(PipelineKind kind, SeededRng& rng,
                      const PipelineRanges& ranges) {
  using kernelforge::BlurFamily;
  OpTrace trace;
  switch (kind) {
    case PipelineKind::Simple: {
      trace.ops.push_back(sample_blur(BlurFamily::Gaussian, rng, ranges));
      trace.ops.push_back(DownscaleOp{
          {.factor = rng.uniform_int(0, 1) == 0 ? 2 : 4,
           .method = DownscaleMethod::Bicubic}});
      trace.ops.push_back(sample_noise(rng, ranges));
      break;
    }
    case PipelineKind::Diverse: {
      // One of 4 blur families or 4 (factor x method) downscales.
      const auto choice = static_cast<int>(rng.uniform_int(0, 7));
      if (choice < 4) {
        trace.ops.push_back(
            sample_blur(kernelforge::kAllBlurFamilies[choice], rng, ranges));
      } else {
        trace.ops.push_back(downscale_choice(choice - 4));
      }
      trace.ops.push_back(sample_noise(rng, ranges));
      trace.ops.push_back(sample_jpeg(rng, ranges));
      break;
    }
    case PipelineKind::DiversePlus: {
      std::array<int, 4> slots = {0, 1, 2, 3};
      rng.shuffle(std::span<int>(slots));
      for (int slot : slots) {
        switch (slot) {
          case 0: {
            const auto family = static_cast<int>(rng.uniform_int(0, 3));
            trace.ops.push_back(
                sample_blur(kernelforge::kAllBlurFamilies[family], rng, ranges));
            break;
          }
          case 1:
            trace.ops.push_back(
                downscale_choice(static_cast<int>(rng.uniform_int(0, 3))));
            break;
          case 2:
            trace.ops.push_back(sample_noise(rng, ranges));
            break;
          default:
            trace.ops.push_back(sample_jpeg(rng, ranges));
            break;
        }
      }
      break;
    }
  }
  trace.ops.push_back(ResizeOp{kPipelineSide});
  trace.ops.push_back(sample_resample(rng));
  return trace;
}

std::pair<Image, OpTrace> apply_pipeline(const Image& img, PipelineKind kind,
                                         SeededRng& rng,
                                         const PipelineRanges& ranges) {
  if (img.height() != kPipelineSide || img.width() != kPipelineSide) {
    throw ParameterError("pipeline input must be 384x384, got " +
                         std::to_string(img.height()) + "x" +
                         std::to_string(img.width()));
  }
  OpTrace trace = plan_pipeline(kind, rng, ranges);
  Image out = replay(img, trace);
  return {std::move(out), std::move(trace)};
}

std::uint64_t image_sub_seed(std::uint64_t seed, std::string_view image_id) {
  return derive_seed(seed, image_id);
}

std::vector<PipelineResult> apply_pipeline_batch(
    std::span<const Image> images, std::span<const std::string> image_ids,
    PipelineKind kind, std::uint64_t seed, int workers,
    const PipelineRanges& ranges) {
  if (images.size() != image_ids.size()) {
    throw ParameterError("image and id counts differ");
  }
  std::vector<PipelineResult> results(images.size());
  parallel_for(images.size(), workers, [&](std::size_t i) {
    const std::uint64_t sub = image_sub_seed(seed, image_ids[i]);
    SeededRng rng(sub);
    auto [img, trace] = apply_pipeline(images[i], kind, rng, ranges);
    results[i] = {std::move(img), std::move(trace), sub};
  });
  return results;
}

}  // namespace dreid::degrade
