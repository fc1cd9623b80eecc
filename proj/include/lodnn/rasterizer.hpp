// Point cloud -> top-view image stack. Six per-cell statistics (count, mean
// reflectivity, mean/std/min/max elevation) normalized into [0, 1], plus the
// binary occupancy variant and grayscale channel export.
#ifndef LODNN_RASTERIZER_HPP
#define LODNN_RASTERIZER_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "lodnn/common.hpp"
#include "lodnn/png_io.hpp"
#include "lodnn/point_cloud.hpp"
#include "lodnn/tensor.hpp"

namespace lodnn {

// Top-view discretization. Row 0 sits at x_max (far ahead of the vehicle),
// column 0 at y_max (far left); both indices grow toward smaller coordinates.
// Cell membership uses half-open intervals [low, high) per axis.
struct GridSpec {
  double x_min = 6.0, x_max = 46.0;    // meters, forward
  double y_min = -10.0, y_max = 10.0;  // meters, left
  double cell_size = 0.10;             // meters

  int width_px() const { return static_cast<int>(std::llround((y_max - y_min) / cell_size)); }
  int height_px() const { return static_cast<int>(std::llround((x_max - x_min) / cell_size)); }

  void validate() const {
    if (!(x_max > x_min) || !(y_max > y_min) || !(cell_size > 0.0))
      throw ConfigError("grid: ranges must be non-empty and cell size positive");
    const double nx = (x_max - x_min) / cell_size;
    const double ny = (y_max - y_min) / cell_size;
    if (std::abs(nx - std::llround(nx)) > 1e-6 || std::abs(ny - std::llround(ny)) > 1e-6)
      throw ConfigError("grid: extents must be integer multiples of the cell size");
  }

  // Cell lookup; false when the point falls outside [min, max) on either axis.
  bool cell_of(double x, double y, int* row, int* col) const {
    if (!(x >= x_min && x < x_max && y >= y_min && y < y_max)) return false;
    const int ix = static_cast<int>(std::floor((x - x_min) / cell_size));
    const int iy = static_cast<int>(std::floor((y - y_min) / cell_size));
    if (ix < 0 || ix >= height_px() || iy < 0 || iy >= width_px()) return false;
    *row = height_px() - 1 - ix;
    *col = width_px() - 1 - iy;
    return true;
  }

  double row_center_x(int row) const {
    return x_min + (height_px() - 1 - row + 0.5) * cell_size;
  }
  double col_center_y(int col) const {
    return y_min + (width_px() - 1 - col + 0.5) * cell_size;
  }

  // Number of bottom rows whose cells lie entirely within x <= x_upper.
  int rows_within_x_upper(double x_upper) const {
    if (!(x_upper > x_min))
      throw ConfigError("x upper bound " + std::to_string(x_upper) + " must exceed grid x_min");
    if (x_upper > x_max + 1e-9)
      throw ConfigError("x upper bound " + std::to_string(x_upper) + " exceeds grid x_max");
    const int rows = static_cast<int>(std::floor((x_upper - x_min) / cell_size + 1e-9));
    return std::min(rows, height_px());
  }
};

// Normalization constants mapping raw statistics into [0, 1]. Kept alongside
// the grid in configuration rather than hard-coded in the rasterizer.
struct NormalizationSpec {
  double count_cap = 64.0;   // counts saturate here
  double z_low = -2.5;       // meters relative to the sensor
  double z_high = 1.5;
  double std_z_cap = 1.0;    // meters

  void validate() const {
    if (!(count_cap > 0.0) || !(z_high > z_low) || !(std_z_cap > 0.0))
      throw ConfigError("normalization: caps must be positive and z range non-empty");
  }
};

// Raw (unnormalized) per-cell accumulation result.
struct CellStats {
  int count = 0;
  double mean_refl = 0.0;
  double mean_z = 0.0;
  double std_z = 0.0;
  double min_z = 0.0;
  double max_z = 0.0;
};

inline const std::vector<std::string>& topview_channel_names() {
  static const std::vector<std::string> names = {"count",  "mean_refl", "mean_z",
                                                 "std_z",  "min_z",     "max_z"};
  return names;
}

// Single deterministic pass in input order; per-cell reductions in double.
inline std::vector<CellStats> compute_cell_stats(const PointCloud& cloud, const GridSpec& grid) {
  grid.validate();
  const int H = grid.height_px(), W = grid.width_px();
  struct Acc {
    int count = 0;
    double sum_refl = 0.0, sum_z = 0.0, sum_z2 = 0.0;
    double min_z = 0.0, max_z = 0.0;
  };
  std::vector<Acc> acc(static_cast<std::size_t>(H) * W);
  for (const LidarPoint& p : cloud.points) {
    int row, col;
    if (!grid.cell_of(p.x, p.y, &row, &col)) continue;
    Acc& a = acc[static_cast<std::size_t>(row) * W + col];
    if (a.count == 0) {
      a.min_z = p.z;
      a.max_z = p.z;
    } else {
      a.min_z = std::min(a.min_z, p.z);
      a.max_z = std::max(a.max_z, p.z);
    }
    a.count += 1;
    a.sum_refl += p.reflectivity;
    a.sum_z += p.z;
    a.sum_z2 += p.z * p.z;
  }
  std::vector<CellStats> stats(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const Acc& a = acc[i];
    CellStats& s = stats[i];
    s.count = a.count;
    if (a.count == 0) continue;  // empty cells keep the designated zero values
    const double n = static_cast<double>(a.count);
    s.mean_refl = a.sum_refl / n;
    s.mean_z = a.sum_z / n;
    // population variance; a single-point cell has std_z = 0
    const double var = std::max(0.0, a.sum_z2 / n - s.mean_z * s.mean_z);
    s.std_z = std::sqrt(var);
    s.min_z = a.min_z;
    s.max_z = a.max_z;
  }
  return stats;
}

namespace raster_detail {

inline float clamp01(double v) {
  return static_cast<float>(v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v));
}

}  // namespace raster_detail

// Channel order: count, mean_refl, mean_z, std_z, min_z, max_z.
inline Tensorf rasterize(const PointCloud& cloud, const GridSpec& grid,
                         const NormalizationSpec& norm = {}) {
  norm.validate();
  const auto stats = compute_cell_stats(cloud, grid);
  const int H = grid.height_px(), W = grid.width_px();
  Tensorf out(1, 6, H, W);
  const double z_span = norm.z_high - norm.z_low;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const CellStats& s = stats[i];
    if (s.count == 0) continue;  // all channels stay exactly 0
    out.data[0 * stats.size() + i] =
        raster_detail::clamp01(std::min(static_cast<double>(s.count), norm.count_cap) / norm.count_cap);
    out.data[1 * stats.size() + i] = raster_detail::clamp01(s.mean_refl);
    out.data[2 * stats.size() + i] = raster_detail::clamp01((s.mean_z - norm.z_low) / z_span);
    out.data[3 * stats.size() + i] = raster_detail::clamp01(s.std_z / norm.std_z_cap);
    out.data[4 * stats.size() + i] = raster_detail::clamp01((s.min_z - norm.z_low) / z_span);
    out.data[5 * stats.size() + i] = raster_detail::clamp01((s.max_z - norm.z_low) / z_span);
  }
  return out;
}

// Binary occupancy: 1 where a cell holds at least one return.
inline Tensorf rasterize_occupancy(const PointCloud& cloud, const GridSpec& grid) {
  grid.validate();
  const int H = grid.height_px(), W = grid.width_px();
  Tensorf out(1, 1, H, W);
  for (const LidarPoint& p : cloud.points) {
    int row, col;
    if (!grid.cell_of(p.x, p.y, &row, &col)) continue;
    out.at(0, 0, row, col) = 1.0f;
  }
  return out;
}

// 8-bit grayscale export, value = round(255 * channel value).
inline void export_channel_png(const Tensorf& tensor, int channel, const std::string& path) {
  require(channel >= 0 && channel < tensor.c,
          "channel index " + std::to_string(channel) + " out of range for " +
              std::to_string(tensor.c) + " channels");
  ImageGray8 img;
  img.width = tensor.w;
  img.height = tensor.h;
  img.pixels.resize(static_cast<std::size_t>(tensor.w) * tensor.h);
  const std::size_t plane = img.pixels.size();
  const float* src = tensor.data.data() + static_cast<std::size_t>(channel) * plane;
  for (std::size_t i = 0; i < plane; ++i) {
    const double v = std::clamp(static_cast<double>(src[i]), 0.0, 1.0);
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * v));
  }
  write_png_gray8(path, img);
}

}  // namespace lodnn

#endif  // LODNN_RASTERIZER_HPP
