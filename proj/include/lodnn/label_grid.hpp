// Top-view label grids and their PNG representations, plus the decoding of
// benchmark-style perspective ground-truth images.
#ifndef LODNN_LABEL_GRID_HPP
#define LODNN_LABEL_GRID_HPP

#include <string>
#include <vector>

#include "lodnn/common.hpp"
#include "lodnn/png_io.hpp"

namespace lodnn {

struct TopViewLabel {
  int height = 0, width = 0;
  std::vector<Label> cells;  // row-major

  TopViewLabel() = default;
  TopViewLabel(int h, int w) : height(h), width(w), cells(static_cast<std::size_t>(h) * w, Label::Unknown) {}

  Label& at(int row, int col) { return cells[static_cast<std::size_t>(row) * width + col]; }
  Label at(int row, int col) const { return cells[static_cast<std::size_t>(row) * width + col]; }
  std::size_t size() const { return cells.size(); }
};

// 8-bit PNG encoding: 0 = NotRoad, 255 = Road, 128 = Unknown.
inline void save_topview_label(const std::string& path, const TopViewLabel& grid) {
  ImageGray8 img;
  img.width = grid.width;
  img.height = grid.height;
  img.pixels.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    switch (grid.cells[i]) {
      case Label::NotRoad: img.pixels[i] = 0; break;
      case Label::Road: img.pixels[i] = 255; break;
      case Label::Unknown: img.pixels[i] = 128; break;
    }
  }
  write_png_gray8(path, img);
}

inline TopViewLabel load_topview_label(const std::string& path) {
  ImageGray8 img = read_png_gray8(path);
  TopViewLabel grid(img.height, img.width);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    switch (img.pixels[i]) {
      case 0: grid.cells[i] = Label::NotRoad; break;
      case 255: grid.cells[i] = Label::Road; break;
      case 128: grid.cells[i] = Label::Unknown; break;
      default:
        throw FormatError("invalid label value " + std::to_string(img.pixels[i]) + " in " + path);
    }
  }
  return grid;
}

// Perspective-space ground truth: which image pixels are road, and which
// carry a valid annotation at all. Road is always a subset of valid.
struct PerspectiveAnnotation {
  int width = 0, height = 0;
  std::vector<std::uint8_t> road_mask;   // row-major booleans
  std::vector<std::uint8_t> valid_mask;

  PerspectiveAnnotation() = default;
  PerspectiveAnnotation(int w, int h)
      : width(w), height(h),
        road_mask(static_cast<std::size_t>(w) * h, 0),
        valid_mask(static_cast<std::size_t>(w) * h, 0) {}

  bool road(int row, int col) const { return road_mask[static_cast<std::size_t>(row) * width + col] != 0; }
  bool valid(int row, int col) const { return valid_mask[static_cast<std::size_t>(row) * width + col] != 0; }
  void set(int row, int col, bool is_valid, bool is_road) {
    const std::size_t i = static_cast<std::size_t>(row) * width + col;
    valid_mask[i] = is_valid ? 1 : 0;
    road_mask[i] = (is_valid && is_road) ? 1 : 0;
  }
};

// Benchmark GT PNG encoding: valid = red channel >= 128, road = blue >= 128
// (and valid). The same encoding is written by the synthetic generator.
inline PerspectiveAnnotation decode_gt_image(const ImageRgb8& img) {
  PerspectiveAnnotation ann(img.width, img.height);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      const std::uint8_t* px = img.at(r, c);
      const bool valid = px[0] >= 128;
      const bool road = valid && px[2] >= 128;
      ann.set(r, c, valid, road);
    }
  return ann;
}

inline ImageRgb8 encode_gt_image(const PerspectiveAnnotation& ann) {
  ImageRgb8 img;
  img.width = ann.width;
  img.height = ann.height;
  img.pixels.assign(static_cast<std::size_t>(ann.width) * ann.height * 3, 0);
  for (int r = 0; r < ann.height; ++r)
    for (int c = 0; c < ann.width; ++c) {
      std::uint8_t* px = img.at(r, c);
      if (ann.valid(r, c)) px[0] = 255;
      if (ann.road(r, c)) px[2] = 255;
    }
  return img;
}

inline PerspectiveAnnotation load_gt_image(const std::string& path) {
  return decode_gt_image(read_png_rgb8(path));
}

inline void save_gt_image(const std::string& path, const PerspectiveAnnotation& ann) {
  write_png_rgb8(path, encode_gt_image(ann));
}

}  // namespace lodnn

#endif  // LODNN_LABEL_GRID_HPP
