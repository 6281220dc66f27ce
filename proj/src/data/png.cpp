// SPDX-License-Identifier: Apache-2.0
#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <memory>
#include <stdexcept>

#include "ssar/data.hpp"

namespace ssar::data {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open(const fs::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "'");
  return f;
}

struct Decoded {
  png_uint_32 width = 0, height = 0;
  int bit_depth = 0, color_type = 0;
  std::vector<std::uint8_t> bytes;  // raw rows after transforms
  int channels = 0;
};

// Reads with the requested transforms applied. want16: keep 16-bit samples
// (host order); otherwise expand to 8-bit.
bool decode(std::FILE* f, Decoded& out, bool want16, int want_channels, std::string& err) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) {
    err = "png_create_read_struct failed";
    return false;
  }
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    err = "corrupt or unsupported PNG";
    return false;
  }
  png_init_io(png, f);
  png_read_info(png, info);
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  out.color_type = png_get_color_type(png, info);

  if (want16) {
    if (out.bit_depth != 16 || out.color_type != PNG_COLOR_TYPE_GRAY) {
      png_destroy_read_struct(&png, &info, nullptr);
      err = "expected a 16-bit single-channel PNG";
      return false;
    }
    png_set_swap(png);  // network byte order -> little endian
  } else {
    if (out.bit_depth == 16) png_set_strip_16(png);
    if (out.color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (out.color_type == PNG_COLOR_TYPE_GRAY && out.bit_depth < 8)
      png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (out.color_type & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS))
      png_set_strip_alpha(png);
    const bool is_gray = !(out.color_type & PNG_COLOR_MASK_COLOR) &&
                         out.color_type != PNG_COLOR_TYPE_PALETTE;
    if (want_channels == 3 && is_gray) png_set_gray_to_rgb(png);
    if (want_channels == 1 && !is_gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  png_read_update_info(png, info);
  out.channels = png_get_channels(png, info);
  const size_t stride = png_get_rowbytes(png, info);
  out.bytes.resize(stride * out.height);
  rows.resize(out.height);
  for (png_uint_32 r = 0; r < out.height; ++r) rows[r] = out.bytes.data() + r * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

bool encode(std::FILE* f, png_uint_32 width, png_uint_32 height, int bit_depth, int color_type,
            const std::uint8_t* data, size_t stride, bool swap16, std::string& err) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) {
    err = "png_create_write_struct failed";
    return false;
  }
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows(height);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    err = "PNG encoding failed";
    return false;
  }
  png_init_io(png, f);
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (swap16) png_set_swap(png);
  for (png_uint_32 r = 0; r < height; ++r)
    rows[r] = const_cast<png_bytep>(data + r * stride);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

}  // namespace

Image8 read_png8(const fs::path& path, int channels) {
  if (channels != 1 && channels != 3) throw std::invalid_argument("read_png8: channels must be 1 or 3");
  auto f = open(path, "rb");
  Decoded d;
  std::string err;
  if (!decode(f.get(), d, false, channels, err))
    throw std::runtime_error("'" + path.string() + "': " + err);
  Image8 img;
  img.width = static_cast<int>(d.width);
  img.height = static_cast<int>(d.height);
  img.channels = d.channels;
  img.pixels = std::move(d.bytes);
  return img;
}

Image16 read_png16(const fs::path& path) {
  auto f = open(path, "rb");
  Decoded d;
  std::string err;
  if (!decode(f.get(), d, true, 1, err)) throw std::runtime_error("'" + path.string() + "': " + err);
  Image16 img;
  img.width = static_cast<int>(d.width);
  img.height = static_cast<int>(d.height);
  img.pixels.resize(d.bytes.size() / 2);
  for (size_t i = 0; i < img.pixels.size(); ++i)
    img.pixels[i] = static_cast<std::uint16_t>(d.bytes[2 * i] | (d.bytes[2 * i + 1] << 8));
  return img;
}

void write_png(const fs::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3)
    throw std::invalid_argument("write_png: 1 or 3 channels supported");
  if (image.pixels.size() != static_cast<size_t>(image.width * image.height * image.channels))
    throw std::invalid_argument("write_png: pixel buffer size mismatch");
  auto f = open(path, "wb");
  std::string err;
  if (!encode(f.get(), static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height),
              8, image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
              image.pixels.data(), static_cast<size_t>(image.width * image.channels), false, err))
    throw std::runtime_error("'" + path.string() + "': " + err);
}

void write_png(const fs::path& path, const Image16& image) {
  if (image.pixels.size() != static_cast<size_t>(image.width * image.height))
    throw std::invalid_argument("write_png: pixel buffer size mismatch");
  std::vector<std::uint8_t> bytes(image.pixels.size() * 2);
  for (size_t i = 0; i < image.pixels.size(); ++i) {
    bytes[2 * i] = static_cast<std::uint8_t>(image.pixels[i] & 0xff);
    bytes[2 * i + 1] = static_cast<std::uint8_t>(image.pixels[i] >> 8);
  }
  auto f = open(path, "wb");
  std::string err;
  if (!encode(f.get(), static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height),
              16, PNG_COLOR_TYPE_GRAY, bytes.data(), static_cast<size_t>(image.width) * 2, true, err))
    throw std::runtime_error("'" + path.string() + "': " + err);
}

}  // namespace ssar::data
