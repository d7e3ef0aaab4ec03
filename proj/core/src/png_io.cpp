#include "mvoc/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace mvoc {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png(const std::filesystem::path& p, const unsigned char* data, int h, int w,
               int channels) {
  FilePtr fp(std::fopen(p.string().c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open for write: " + p.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png write failed: " + p.string());
  }
  png_init_io(png, fp.get());
  const int color = channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y)
    rows[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(data + static_cast<std::size_t>(y) * w * channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<unsigned char> read_png(const std::filesystem::path& p, int& h, int& w,
                                    int expect_channels) {
  FilePtr fp(std::fopen(p.string().c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open for read: " + p.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png read failed: " + p.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  w = static_cast<int>(png_get_image_width(png, info));
  h = static_cast<int>(png_get_image_height(png, info));
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (expect_channels == 3) {
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
      png_set_gray_to_rgb(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
  } else {
    if (color & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  if (rowbytes != static_cast<std::size_t>(w) * expect_channels) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("unexpected channel layout in " + p.string());
  }
  std::vector<unsigned char> data(static_cast<std::size_t>(h) * rowbytes);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y)
    rows[static_cast<std::size_t>(y)] = data.data() + static_cast<std::size_t>(y) * rowbytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return data;
}

}  // namespace

void write_png_rgb(const std::filesystem::path& p, const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3)
    throw std::invalid_argument("write_png_rgb: expected [H,W,3], got " + image.shape_str());
  const int h = static_cast<int>(image.dim(0));
  const int w = static_cast<int>(image.dim(1));
  std::vector<unsigned char> bytes(static_cast<std::size_t>(h) * w * 3);
  for (std::int64_t i = 0; i < image.numel(); ++i) {
    double v = image[i];
    if (v < 0) v = 0;
    if (v > 1) v = 1;
    bytes[static_cast<std::size_t>(i)] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  write_png(p, bytes.data(), h, w, 3);
}

Tensor read_png_rgb(const std::filesystem::path& p) {
  int h = 0, w = 0;
  auto bytes = read_png(p, h, w, 3);
  Tensor t({h, w, 3});
  for (std::size_t i = 0; i < bytes.size(); ++i)
    t[static_cast<std::int64_t>(i)] = static_cast<double>(bytes[i]) / 255.0;
  return t;
}

void write_png_gray(const std::filesystem::path& p, const std::vector<std::uint8_t>& data,
                    int height, int width) {
  if (data.size() != static_cast<std::size_t>(height) * width)
    throw std::invalid_argument("write_png_gray: size mismatch");
  write_png(p, data.data(), height, width, 1);
}

std::vector<std::uint8_t> read_png_gray(const std::filesystem::path& p, int& height, int& width) {
  return read_png(p, height, width, 1);
}

}  // namespace mvoc
