#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "../test_images.hpp"
#include "dreid/degrade.hpp"
#include "dreid/errors.hpp"
#include "dreid/trace_json.hpp"

using namespace dreid;
using namespace dreid::degrade;
using dreid::testing::natural_image;
using dreid::testing::random_image;

namespace {

double max_abs_diff(const Image& a, const Image& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a.samples()[i] - b.samples()[i]));
  }
  return worst;
}

double psnr(const Image& a, const Image& b) {
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.samples()[i] - b.samples()[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  return 10.0 * std::log10(1.0 / mse);
}

// Textbook convolution: reflect-101 border, flipped kernel, no clamping.
Image brute_force_convolve(const Image& img, const KernelGrid& k) {
  const int r = k.radius();
  auto reflect = [](int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
  };
  Image out(img.height(), img.width(), img.channels());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) {
        double acc = 0.0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx)
            acc += k.at_offset(dx, dy) *
                   img.at(reflect(y - dy, img.height()),
                          reflect(x - dx, img.width()), c);
        out.at(y, x, c) = acc;
      }
  return out;
}

Image constant_image(int side, int channels, double v) {
  return Image(side, side, channels, v);
}

}  // namespace

TEST_CASE("convolve: delta kernel is the identity") {
  const Image img = random_image(16, 12, 3, 1);
  CHECK(convolve(img, KernelGrid::delta(5)) == img);
}

TEST_CASE("convolve: sum-one kernels preserve constants") {
  const Image img = constant_image(32, 1, 0.37);
  SeededRng rng(5);
  for (auto f : kernelforge::kAllBlurFamilies) {
    const auto spec = kernelforge::sample_blur_spec(f, rng);
    const auto k = kernelforge::make_kernel(spec, 1);
    if (k.side() > 32) continue;
    CHECK(max_abs_diff(convolve(img, k), img) <= 1e-12);
  }
}

TEST_CASE("convolve: matches the brute-force oracle") {
  const Image img = random_image(8, 8, 1, 11);
  const KernelGrid box(3, std::vector<double>(9, 1.0 / 9.0));
  CHECK(max_abs_diff(convolve(img, box), brute_force_convolve(img, box)) <= 1e-12);

  // Asymmetric kernel pins the flip direction.
  const auto motion = kernelforge::make_motion_kernel({3, 0.4, 1.0, {-1, 1}});
  const Image big = random_image(9, 11, 3, 12);
  CHECK(max_abs_diff(convolve(big, motion), brute_force_convolve(big, motion)) <=
        1e-12);
}

TEST_CASE("convolve: kernel larger than the image is rejected") {
  CHECK_THROWS_AS(convolve(random_image(4, 4, 1, 0), KernelGrid::delta(5)),
                  ParameterError);
}

TEST_CASE("downscale: constants survive every method") {
  const Image img = constant_image(4, 1, 0.6);
  for (auto m : {DownscaleMethod::Nearest, DownscaleMethod::Bilinear,
                 DownscaleMethod::Bicubic}) {
    const Image out = downscale(img, {2, m});
    CHECK(out.height() == 2);
    CHECK(out.width() == 2);
    CHECK(max_abs_diff(out, constant_image(2, 1, 0.6)) <= 1e-12);
  }
}

TEST_CASE("downscale: nearest index mapping") {
  Image img(4, 4, 1);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) img.at(y, x) = (4 * y + x) / 16.0;
  // Source coordinate (dst + 0.5) * 2 - 0.5 = 2 dst + 0.5; top-left of the
  // two nearest samples is 2 dst.
  const Image out = downscale(img, {2, DownscaleMethod::Nearest});
  CHECK(out.at(0, 0) == img.at(0, 0));
  CHECK(out.at(0, 1) == img.at(0, 2));
  CHECK(out.at(1, 0) == img.at(2, 0));
  CHECK(out.at(1, 1) == img.at(2, 2));

  Image big(8, 8, 1);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) big.at(y, x) = (8 * y + x) / 64.0;
  // Factor 4: coordinate 4 dst + 1.5, top-left nearest is 4 dst + 1.
  const Image out4 = downscale(big, {4, DownscaleMethod::Nearest});
  CHECK(out4.at(1, 0) == big.at(5, 1));
}

TEST_CASE("downscale: bilinear reproduces a linear ramp") {
  Image img(8, 8, 1);
  auto ramp = [](double y, double x) { return 0.1 + 0.03 * x + 0.05 * y; };
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) img.at(y, x) = ramp(y, x);
  const Image out = downscale(img, {2, DownscaleMethod::Bilinear});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      CHECK(std::abs(out.at(y, x) - ramp(2 * y + 0.5, 2 * x + 0.5)) <= 1e-12);
}

TEST_CASE("downscale: non-divisible sizes are rejected") {
  CHECK_THROWS_AS(downscale(random_image(6, 6, 1, 0), {4, DownscaleMethod::Bilinear}),
                  ParameterError);
  CHECK_THROWS_AS(downscale(random_image(8, 8, 1, 0), {3, DownscaleMethod::Nearest}),
                  ParameterError);
}

TEST_CASE("upscale_bicubic: identity, constants and affine reproduction") {
  const Image img = random_image(12, 12, 3, 4);
  CHECK(max_abs_diff(upscale_bicubic(img, 12), img) <= 1e-12);
  CHECK(max_abs_diff(upscale_bicubic(constant_image(6, 1, 0.25), 24),
                     constant_image(24, 1, 0.25)) <= 1e-12);

  Image ramp(16, 16, 1);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) ramp.at(y, x) = 0.1 + 0.02 * x + 0.025 * y;
  const Image up = upscale_bicubic(ramp, 32);
  for (int y = 4; y < 28; ++y) {
    for (int x = 4; x < 28; ++x) {
      const double sx = (x + 0.5) / 2.0 - 0.5, sy = (y + 0.5) / 2.0 - 0.5;
      CHECK(std::abs(up.at(y, x) - (0.1 + 0.02 * sx + 0.025 * sy)) <= 1e-9);
    }
  }
  CHECK_THROWS_AS(upscale_bicubic(img, 8), ParameterError);
}

TEST_CASE("gaussian noise: statistics, determinism and clamping") {
  const Image flat = constant_image(384, 1, 0.5);
  SeededRng rng(17);
  const Image noisy = add_gaussian_noise(flat, {4e-3}, rng);
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double d = noisy.samples()[i] - 0.5;
    sum += d;
    sq += d * d;
  }
  const double n = static_cast<double>(flat.size());
  const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
  CHECK(std::abs(sd - 4e-3) <= 0.1 * 4e-3);

  SeededRng a(3), b(3);
  CHECK(add_gaussian_noise(flat, {1e-2}, a) == add_gaussian_noise(flat, {1e-2}, b));

  SeededRng z(8);
  const Image dark = add_gaussian_noise(constant_image(64, 3, 0.0), {1e-2}, z);
  for (double v : dark.samples()) CHECK(v >= 0.0);
}

TEST_CASE("jpeg: quality ordering, constants and determinism") {
  const Image img = natural_image(96, 96, 3, 21);
  const double hi = psnr(img, jpeg_compress(img, {95}));
  const double lo = psnr(img, jpeg_compress(img, {30}));
  CHECK(hi > lo);

  for (int q : {30, 60, 95}) {
    const Image flat = constant_image(40, 3, 0.42);
    CHECK(max_abs_diff(jpeg_compress(flat, {q}), flat) <= 1.0 / 255.0);
  }
  CHECK(jpeg_compress(img, {57}) == jpeg_compress(img, {57}));
  CHECK_THROWS_AS(jpeg_compress(img, {20}), ParameterError);

  const Image gray = natural_image(64, 64, 1, 2);
  CHECK(jpeg_compress(gray, {80}).channels() == 1);
}

TEST_CASE("final_resample: block-constant and idempotent") {
  const Image img = random_image(384, 384, 1, 8);
  const Image once = final_resample(img, 2);
  CHECK(once.height() == 384);
  for (int y = 0; y < 384; y += 2)
    for (int x = 0; x < 384; x += 2) {
      const double v = once.at(y, x);
      CHECK(once.at(y, x + 1) == v);
      CHECK(once.at(y + 1, x) == v);
      CHECK(once.at(y + 1, x + 1) == v);
    }
  CHECK(final_resample(once, 2) == once);
  const Image four = final_resample(img, 4);
  CHECK(final_resample(four, 4) == four);
  const Image flat = constant_image(64, 3, 0.9);
  CHECK(final_resample(flat, 4) == flat);
  CHECK_THROWS_AS(final_resample(random_image(10, 10, 1, 0), 4), ParameterError);
}

TEST_CASE("pipelines: size, range, determinism and replay") {
  const Image img = natural_image(384, 384, 3, 5);
  for (auto kind : {PipelineKind::Simple, PipelineKind::Diverse,
                    PipelineKind::DiversePlus}) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      SeededRng a(seed), b(seed);
      auto [out_a, trace_a] = apply_pipeline(img, kind, a);
      auto [out_b, trace_b] = apply_pipeline(img, kind, b);
      CHECK(out_a == out_b);
      CHECK(trace_to_json(trace_a) == trace_to_json(trace_b));
      CHECK(out_a.height() == 384);
      CHECK(out_a.width() == 384);
      for (double v : out_a.samples()) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
      }
      CHECK(replay(img, trace_a) == out_a);
      // Through JSON text and back.
      const auto parsed = trace_from_json(
          nlohmann::json::parse(trace_to_json(trace_a).dump()));
      CHECK(replay(img, parsed) == out_a);
    }
  }
}

TEST_CASE("pipelines reject inputs that are not 384x384") {
  SeededRng rng(0);
  CHECK_THROWS_AS(apply_pipeline(random_image(256, 256, 1, 0),
                                 PipelineKind::Diverse, rng),
                  ParameterError);
}

TEST_CASE("simple pipeline structure") {
  SeededRng rng(4);
  for (int i = 0; i < 200; ++i) {
    const auto t = plan_pipeline(PipelineKind::Simple, rng);
    REQUIRE(t.ops.size() == 5);
    const auto& blur = std::get<BlurOp>(t.ops[0]);
    CHECK(kernelforge::family_of(blur.spec) == kernelforge::BlurFamily::Gaussian);
    CHECK(std::holds_alternative<DownscaleOp>(t.ops[1]));
    CHECK(std::holds_alternative<NoiseOp>(t.ops[2]));
    CHECK(std::holds_alternative<ResizeOp>(t.ops[3]));
    CHECK(std::holds_alternative<ResampleOp>(t.ops[4]));
  }
}

TEST_CASE("diverse-plus covers all slot orders; diverse keeps its shape") {
  SeededRng rng(99);
  std::set<std::string> orders;
  for (int i = 0; i < 10000; ++i) {
    const auto t = plan_pipeline(PipelineKind::DiversePlus, rng);
    std::string order;
    for (std::size_t k = 0; k < 4; ++k) order += std::string(op_name(t.ops[k])) + ",";
    orders.insert(order);
  }
  CHECK(orders.size() == 24);

  std::set<std::string> first;
  for (int i = 0; i < 10000; ++i) {
    const auto t = plan_pipeline(PipelineKind::Diverse, rng);
    REQUIRE(t.ops.size() == 5);
    if (const auto* b = std::get_if<BlurOp>(&t.ops[0])) {
      first.insert(std::string(kernelforge::to_string(kernelforge::family_of(b->spec))));
    } else {
      const auto& d = std::get<DownscaleOp>(t.ops[0]);
      first.insert(std::to_string(d.spec.factor) +
                   std::string(to_string(d.spec.method)));
    }
    CHECK(op_name(t.ops[1]) == "noise");
    CHECK(op_name(t.ops[2]) == "jpeg");
  }
  CHECK(first.size() == 8);
}

TEST_CASE("constant images change only by noise and quantization") {
  const Image flat = constant_image(384, 1, 0.5);
  for (auto kind : {PipelineKind::Simple, PipelineKind::Diverse}) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      SeededRng rng(seed);
      auto [out, trace] = apply_pipeline(flat, kind, rng);
      CHECK(max_abs_diff(out, flat) <= 0.05);
    }
  }
}

TEST_CASE("batch results do not depend on the worker count") {
  std::vector<Image> images;
  std::vector<std::string> ids;
  for (int i = 0; i < 6; ++i) {
    images.push_back(natural_image(384, 384, 1, 100 + i));
    ids.push_back("img" + std::to_string(i));
  }
  const auto serial = apply_pipeline_batch(images, ids, PipelineKind::DiversePlus, 7, 1);
  const auto threaded = apply_pipeline_batch(images, ids, PipelineKind::DiversePlus, 7, 4);
  for (std::size_t i = 0; i < images.size(); ++i) {
    CHECK(serial[i].image == threaded[i].image);
    CHECK(serial[i].sub_seed == threaded[i].sub_seed);
    CHECK(trace_to_json(serial[i].trace) == trace_to_json(threaded[i].trace));
  }
  // Sub-seeds follow the id, not the position.
  std::vector<Image> rev(images.rbegin(), images.rend());
  std::vector<std::string> rev_ids(ids.rbegin(), ids.rend());
  const auto reversed = apply_pipeline_batch(rev, rev_ids, PipelineKind::DiversePlus, 7, 2);
  CHECK(reversed.back().image == serial.front().image);
}
