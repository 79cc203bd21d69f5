#include "avatar/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "avatar/errors.hpp"

namespace avatar {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

uint8_t to_u8(double v) {
  const double q = std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
  return static_cast<uint8_t>(q);
}

void write_rows(const std::filesystem::path& path, uint32_t width, uint32_t height, int bit_depth, int color_type,
                std::vector<png_bytep>& rows) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed to write PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Tensor read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed to decode PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int color_type = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  std::vector<uint8_t> buffer(static_cast<std::size_t>(width) * height * 3);
  std::vector<png_bytep> rows(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = buffer.data() + static_cast<std::size_t>(y) * width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor image({height, width, 3});
  for (std::size_t i = 0; i < buffer.size(); ++i) image[i] = buffer[i] / 255.0;
  return image;
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
  require_image(image, "write_png");
  const auto height = static_cast<uint32_t>(image.dim(0));
  const auto width = static_cast<uint32_t>(image.dim(1));
  std::vector<uint8_t> buffer(image.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) buffer[i] = to_u8(image[i]);
  std::vector<png_bytep> rows(height);
  for (uint32_t y = 0; y < height; ++y) rows[y] = buffer.data() + static_cast<std::size_t>(y) * width * 3;
  write_rows(path, width, height, 8, PNG_COLOR_TYPE_RGB, rows);
}

void write_depth_png16(const std::filesystem::path& path, const Tensor& depth, double near, double far) {
  if (depth.rank() != 2) throw ShapeError("write_depth_png16: expected an H x W depth map");
  if (!(far > near)) throw ValidationError("write_depth_png16: far must exceed near");
  const auto height = static_cast<uint32_t>(depth.dim(0));
  const auto width = static_cast<uint32_t>(depth.dim(1));
  std::vector<uint8_t> buffer(depth.size() * 2);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    const double unit = std::clamp((depth[i] - near) / (far - near), 0.0, 1.0);
    const auto v = static_cast<uint16_t>(std::floor(unit * 65535.0 + 0.5));
    buffer[2 * i] = static_cast<uint8_t>(v >> 8);  // PNG stores big-endian samples
    buffer[2 * i + 1] = static_cast<uint8_t>(v & 0xff);
  }
  std::vector<png_bytep> rows(height);
  for (uint32_t y = 0; y < height; ++y) rows[y] = buffer.data() + static_cast<std::size_t>(y) * width * 2;
  write_rows(path, width, height, 16, PNG_COLOR_TYPE_GRAY, rows);
}

Tensor quantize_8bit(const Tensor& image) {
  Tensor out = image;
  for (double& v : out.storage()) v = to_u8(v) / 255.0;
  return out;
}

}  // namespace avatar
