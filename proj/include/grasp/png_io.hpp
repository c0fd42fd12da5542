#pragma once

// PNG load/save through libpng. Loading accepts 8- or 16-bit gray, gray+alpha,
// RGB, RGBA and palette images (alpha is dropped); saving always writes
// 16-bit so the quantization step (1/65535) stays far below any useful
// perturbation budget.

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "grasp/error.hpp"
#include "grasp/image.hpp"

namespace grasp {

class ImageIoError : public Error {
 public:
  using Error::Error;
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

inline ImageTensor load_png(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw ImageIoError("cannot open " + path);
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw ImageIoError(path + ": not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw ImageIoError("libpng: out of memory");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw ImageIoError("libpng: out of memory");
  }
  std::vector<unsigned char> buf;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageIoError(path + ": corrupt PNG data");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);  // native little-endian 16-bit samples
  png_read_update_info(png, info);

  const std::size_t w = png_get_image_width(png, info);
  const std::size_t h = png_get_image_height(png, info);
  const std::size_t ch = png_get_channels(png, info);
  const std::size_t out_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buf.resize(rowbytes * h);
  rows.resize(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = buf.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  ImageTensor img(Shape{h, w, ch});
  const double maxv = out_depth == 16 ? 65535.0 : 255.0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t i = 0; i < w * ch; ++i) {
      double v;
      if (out_depth == 16) {
        std::uint16_t s;
        std::memcpy(&s, rows[y] + 2 * i, 2);
        v = s;
      } else {
        v = rows[y][i];
      }
      img[y * w * ch + i] = v / maxv;
    }
  return img;
}

// Values are clamped to the tensor's pixel range, rescaled to [0, 65535] and
// rounded. One or three channels only.
inline void save_png16(const std::string& path, const ImageTensor& img) {
  const std::size_t h = img.height(), w = img.width(), ch = img.channels();
  if (ch != 1 && ch != 3) throw ImageIoError("save_png16: need 1 or 3 channels");
  std::vector<unsigned char> buf(h * w * ch * 2);
  const PixelRange r = img.range();
  for (std::size_t i = 0; i < img.size(); ++i) {
    double v = (img[i] - r.lo) / r.width();
    v = std::clamp(v, 0.0, 1.0);
    const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    buf[2 * i] = static_cast<unsigned char>(q >> 8);  // PNG stores big-endian
    buf[2 * i + 1] = static_cast<unsigned char>(q & 0xFF);
  }

  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw ImageIoError("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw ImageIoError("libpng: out of memory");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw ImageIoError("libpng: out of memory");
  }
  std::vector<png_bytep> rows(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = buf.data() + y * w * ch * 2;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageIoError(path + ": PNG encoding failed");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 16,
               ch == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace grasp
