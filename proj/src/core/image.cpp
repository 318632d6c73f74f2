#include "eegrecon/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "eegrecon/error.hpp"

namespace eegrecon {

StimulusImage make_image(std::string id, int height, int width) {
  StimulusImage img;
  img.image_id = std::move(id);
  img.height = height;
  img.width = width;
  img.pixels.assign(static_cast<std::size_t>(height) * width * 3, 0);
  return img;
}

namespace {

void png_write_to_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void png_flush_noop(png_structp) {}

struct ReadCursor {
  const std::vector<std::uint8_t>* bytes;
  std::size_t offset;
};

void png_read_from_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->offset + length > cur->bytes->size()) png_error(png, "truncated PNG");
  std::memcpy(data, cur->bytes->data() + cur->offset, length);
  cur->offset += length;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const StimulusImage& image) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) fail(Errc::IoError, "libpng initialisation failed");
  std::vector<std::uint8_t> out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(Errc::IoError, "PNG encode failed");
  }
  png_set_write_fn(png, &out, png_write_to_vector, png_flush_noop);
  png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    auto* row = const_cast<png_bytep>(image.pixels.data() + static_cast<std::size_t>(y) * image.width * 3);
    png_write_row(png, row);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

StimulusImage decode_png(const std::vector<std::uint8_t>& bytes, std::string id) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) fail(Errc::IoError, "not a PNG stream");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) fail(Errc::IoError, "libpng initialisation failed");
  ReadCursor cursor{&bytes, 0};
  StimulusImage img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(Errc::IoError, "PNG decode failed");
  }
  png_set_read_fn(png, &cursor, png_read_from_vector);
  png_read_info(png, info);
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  img = make_image(std::move(id), height, width);
  for (int y = 0; y < height; ++y)
    png_read_row(png, img.pixels.data() + static_cast<std::size_t>(y) * width * 3, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const std::filesystem::path& path, const StimulusImage& image) {
  const auto bytes = encode_png(image);
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(Errc::IoError, "cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

StimulusImage read_png(const std::filesystem::path& path, std::string id) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Errc::IoError, "cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_png(bytes, std::move(id));
}

std::vector<double> to_unit_planar(const StimulusImage& image) {
  const std::size_t hw = static_cast<std::size_t>(image.height) * image.width;
  std::vector<double> out(3 * hw);
  for (std::size_t p = 0; p < hw; ++p)
    for (int c = 0; c < 3; ++c) out[c * hw + p] = image.pixels[p * 3 + c] / 127.5 - 1.0;
  return out;
}

StimulusImage from_unit_planar(const std::vector<double>& planar, int height, int width, std::string id) {
  StimulusImage img = make_image(std::move(id), height, width);
  const std::size_t hw = static_cast<std::size_t>(height) * width;
  for (std::size_t p = 0; p < hw; ++p)
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp((planar[c * hw + p] + 1.0) * 127.5, 0.0, 255.0);
      img.pixels[p * 3 + c] = static_cast<std::uint8_t>(std::lround(v));
    }
  return img;
}

}  // namespace eegrecon
