#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dreid/image.hpp"

namespace dreid::codec {

/// Identity of the linked JPEG encoder, e.g. "libjpeg-turbo 2.1.2 (jpeglib 80)".
std::string jpeg_encoder_identity();

/// Baseline JPEG of the 8-bit quantized image. Gray images are encoded as
/// single-component JPEGs; RGB uses the library's default 4:2:0 sampling.
std::vector<std::uint8_t> encode_jpeg(const Image& img, int quality);
Image decode_jpeg(const std::vector<std::uint8_t>& bytes);

/// Reads PNG (8/16-bit, gray/RGB, alpha dropped) or JPEG by content sniffing.
Image read_image(const std::filesystem::path& path);

/// Writes a 16-bit PNG with the image's channel count.
void write_png(const std::filesystem::path& path, const Image& img);

}  // namespace dreid::codec
