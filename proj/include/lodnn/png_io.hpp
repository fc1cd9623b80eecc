// Thin libpng wrappers for the 8-bit grayscale and RGB images the pipeline
// reads and writes (channel exports, label grids, benchmark-style ground
// truth, segmentation overlays).
#ifndef LODNN_PNG_IO_HPP
#define LODNN_PNG_IO_HPP

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <png.h>

#include "lodnn/common.hpp"

namespace lodnn {

struct ImageGray8 {
  int width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, height*width

  std::uint8_t& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * width + col]; }
  std::uint8_t at(int row, int col) const {
    return pixels[static_cast<std::size_t>(row) * width + col];
  }
};

struct ImageRgb8 {
  int width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, height*width*3

  std::uint8_t* at(int row, int col) {
    return pixels.data() + (static_cast<std::size_t>(row) * width + col) * 3;
  }
  const std::uint8_t* at(int row, int col) const {
    return pixels.data() + (static_cast<std::size_t>(row) * width + col) * 3;
  }
};

namespace png_detail {

struct FileCloser {
  std::FILE* f = nullptr;
  ~FileCloser() {
    if (f) std::fclose(f);
  }
};

inline void write_png(const std::string& path, int width, int height, bool rgb,
                      const std::uint8_t* pixels) {
  FileCloser fc{std::fopen(path.c_str(), "wb")};
  if (!fc.f) throw IoError("cannot open PNG for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng: failed to create write struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng: failed to create info struct");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng: write error for " + path);
  }
  png_init_io(png, fc.f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               rgb ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(width) * (rgb ? 3 : 1);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(pixels + static_cast<std::size_t>(y) * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Reads any 8/16-bit gray/palette/RGB(A) PNG and normalizes to 8-bit RGB.
inline ImageRgb8 read_png_rgb(const std::string& path) {
  FileCloser fc{std::fopen(path.c_str(), "rb")};
  if (!fc.f) throw IoError("cannot open PNG: " + path);
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fc.f) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw FormatError("not a PNG file: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng: failed to create read struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng: failed to create info struct");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("libpng: corrupt PNG " + path);
  }
  png_init_io(png, fc.f);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_set_expand(png);           // palette/low-bit-depth -> 8-bit
  png_set_strip_16(png);         // 16-bit -> 8-bit
  png_set_strip_alpha(png);      // drop alpha
  png_set_gray_to_rgb(png);      // gray -> RGB
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  ImageRgb8 img;
  img.width = width;
  img.height = height;
  img.pixels.resize(static_cast<std::size_t>(width) * height * 3);
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y)
    rows[static_cast<std::size_t>(y)] = img.pixels.data() + static_cast<std::size_t>(y) * width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace png_detail

inline void write_png_gray8(const std::string& path, const ImageGray8& img) {
  png_detail::write_png(path, img.width, img.height, false, img.pixels.data());
}

inline void write_png_rgb8(const std::string& path, const ImageRgb8& img) {
  png_detail::write_png(path, img.width, img.height, true, img.pixels.data());
}

inline ImageRgb8 read_png_rgb8(const std::string& path) { return png_detail::read_png_rgb(path); }

inline ImageGray8 read_png_gray8(const std::string& path) {
  ImageRgb8 rgb = png_detail::read_png_rgb(path);
  ImageGray8 img;
  img.width = rgb.width;
  img.height = rgb.height;
  img.pixels.resize(static_cast<std::size_t>(rgb.width) * rgb.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const std::uint8_t* p = rgb.pixels.data() + 3 * i;
    if (p[0] != p[1] || p[1] != p[2])
      throw FormatError("expected a grayscale PNG: " + path);
    img.pixels[i] = p[0];
  }
  return img;
}

}  // namespace lodnn

#endif  // LODNN_PNG_IO_HPP
