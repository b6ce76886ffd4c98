#include "dreid/codec.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>

// clang-format off
#include <jpeglib.h>
#include <png.h>
// clang-format on

#include "dreid/errors.hpp"

namespace dreid::codec {
namespace {

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::uint16_t to_u16(double v) {
  return static_cast<std::uint16_t>(
      std::lround(std::clamp(v, 0.0, 1.0) * 65535.0));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Decodes either codec's buffer into the caller-provided image. Kept free of
// C++ objects with destructors between setjmp and longjmp.
bool decode_jpeg_raw(const std::vector<std::uint8_t>& bytes,
                     std::vector<std::uint8_t>& pixels, int& h, int& w, int& c,
                     std::string& error) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    error = err.message;
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.dct_method = JDCT_ISLOW;
  if (cinfo.num_components != 1) cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  h = static_cast<int>(cinfo.output_height);
  w = static_cast<int>(cinfo.output_width);
  c = cinfo.output_components;
  pixels.resize(static_cast<std::size_t>(h) * w * c);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * c;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

bool encode_jpeg_raw(const std::vector<std::uint8_t>& pixels, int h, int w,
                     int c, int quality, std::vector<std::uint8_t>& out,
                     std::string& error) {
  jpeg_compress_struct cinfo;
  JpegErrorManager err;
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    error = err.message;
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    return false;
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(w);
  cinfo.image_height = static_cast<JDIMENSION>(h);
  cinfo.input_components = c;
  cinfo.in_color_space = c == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_set_defaults(&cinfo);
  cinfo.dct_method = JDCT_ISLOW;
  cinfo.optimize_coding = FALSE;
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(
        pixels.data() + static_cast<std::size_t>(cinfo.next_scanline) * w * c);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  out.assign(buffer, buffer + size);
  std::free(buffer);
  return true;
}

Image from_u8(const std::vector<std::uint8_t>& pixels, int h, int w, int c) {
  Image img(h, w, c == 1 ? 1 : 3);
  auto out = img.samples();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pixels[i] / 255.0;
  return img;
}

struct PngReadState {
  const std::vector<std::uint8_t>* bytes;
  std::size_t offset;
};

void png_read_from_memory(png_structp png, png_bytep data, png_size_t length) {
  auto* state = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (state->offset + length > state->bytes->size()) {
    png_error(png, "truncated PNG");
  }
  std::copy_n(state->bytes->data() + state->offset, length, data);
  state->offset += length;
}

void png_error_handler(png_structp png, png_const_charp msg) {
  auto* error = static_cast<std::string*>(png_get_error_ptr(png));
  *error = msg;
  png_longjmp(png, 1);
}

bool decode_png_raw(const std::vector<std::uint8_t>& bytes,
                    std::vector<std::uint16_t>& pixels, int& h, int& w, int& c,
                    std::string& error) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error,
                                           png_error_handler, nullptr);
  if (!png) {
    error = "png_create_read_struct failed";
    return false;
  }
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows;
  std::vector<std::uint8_t> raw;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  PngReadState state{&bytes, 0};
  png_set_read_fn(png, &state, png_read_from_memory);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  h = static_cast<int>(png_get_image_height(png, info));
  w = static_cast<int>(png_get_image_width(png, info));
  c = png_get_channels(png, info);
  const int out_depth = png_get_bit_depth(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  raw.resize(row_bytes * h);
  rows.resize(h);
  for (int y = 0; y < h; ++y) rows[y] = raw.data() + row_bytes * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  pixels.resize(static_cast<std::size_t>(h) * w * c);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    if (out_depth == 16) {
      const std::uint16_t v = static_cast<std::uint16_t>(
          (raw[2 * i] << 8) | raw[2 * i + 1]);
      pixels[i] = v;
    } else {
      pixels[i] = static_cast<std::uint16_t>(raw[i] * 257);
    }
  }
  return true;
}

bool encode_png_raw(const std::vector<std::uint8_t>& raw, int h, int w, int c,
                    std::FILE* file, std::string& error) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error,
                                            png_error_handler, nullptr);
  if (!png) {
    error = "png_create_write_struct failed";
    return false;
  }
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows(h);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, file);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w),
               static_cast<png_uint_32>(h), 16,
               c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  const std::size_t row_bytes = static_cast<std::size_t>(w) * c * 2;
  for (int y = 0; y < h; ++y) {
    rows[y] = const_cast<png_bytep>(raw.data() + row_bytes * y);
  }
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

}  // namespace

std::string jpeg_encoder_identity() {
#ifdef LIBJPEG_TURBO_VERSION
#define DREID_STR2(x) #x
#define DREID_STR(x) DREID_STR2(x)
  return std::string("libjpeg-turbo ") + DREID_STR(LIBJPEG_TURBO_VERSION) +
         " (jpeglib " + std::to_string(JPEG_LIB_VERSION) + ")";
#else
  return "libjpeg (jpeglib " + std::to_string(JPEG_LIB_VERSION) + ")";
#endif
}

std::vector<std::uint8_t> encode_jpeg(const Image& img, int quality) {
  std::vector<std::uint8_t> pixels(img.size());
  auto in = img.samples();
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = to_u8(in[i]);
  std::vector<std::uint8_t> out;
  std::string error;
  if (!encode_jpeg_raw(pixels, img.height(), img.width(), img.channels(),
                       quality, out, error)) {
    throw IoError("JPEG encode failed: " + error);
  }
  return out;
}

Image decode_jpeg(const std::vector<std::uint8_t>& bytes) {
  std::vector<std::uint8_t> pixels;
  int h = 0, w = 0, c = 0;
  std::string error;
  if (!decode_jpeg_raw(bytes, pixels, h, w, c, error)) {
    throw IoError("JPEG decode failed: " + error);
  }
  return from_u8(pixels, h, w, c);
}

Image read_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) {
    std::vector<std::uint16_t> pixels;
    int h = 0, w = 0, c = 0;
    std::string error;
    if (!decode_png_raw(bytes, pixels, h, w, c, error)) {
      throw IoError("PNG decode failed for " + path.string() + ": " + error);
    }
    Image img(h, w, c == 1 ? 1 : 3);
    auto out = img.samples();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pixels[i] / 65535.0;
    return img;
  }
  if (bytes.size() >= 2 && bytes[0] == 0xFF && bytes[1] == 0xD8) {
    return decode_jpeg(bytes);
  }
  throw IoError("unsupported image format: " + path.string());
}

void write_png(const std::filesystem::path& path, const Image& img) {
  std::vector<std::uint8_t> raw(img.size() * 2);
  auto in = img.samples();
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::uint16_t v = to_u16(in[i]);
    raw[2 * i] = static_cast<std::uint8_t>(v >> 8);
    raw[2 * i + 1] = static_cast<std::uint8_t>(v & 0xFF);
  }
  std::unique_ptr<std::FILE, decltype(&std::fclose)> file(
      std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!file) throw IoError("cannot write " + path.string());
  std::string error;
  if (!encode_png_raw(raw, img.height(), img.width(), img.channels(),
                      file.get(), error)) {
    throw IoError("PNG encode failed for " + path.string() + ": " + error);
  }
}

}  // namespace dreid::codec
