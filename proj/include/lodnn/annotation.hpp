// Perspective-annotation to top-view mapping: point-cloud projection with
// sector interpolation, and inverse perspective mapping of grid-cell centers.
#ifndef LODNN_ANNOTATION_HPP
#define LODNN_ANNOTATION_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lodnn/common.hpp"
#include "lodnn/label_grid.hpp"
#include "lodnn/point_cloud.hpp"
#include "lodnn/rasterizer.hpp"

namespace lodnn {

// Composite 3x4 projection from homogeneous LIDAR coordinates to homogeneous
// image pixels (rectified intrinsics * rectification * extrinsics).
struct CameraCalibration {
  std::array<double, 12> proj{};  // row-major 3x4
  int image_width = 0;
  int image_height = 0;

  struct Projection {
    double u = 0.0, v = 0.0, depth = 0.0;
    bool ok = false;        // in front of the camera with non-degenerate scale
    bool degenerate = false;
  };

  Projection project(double x, double y, double z) const {
    Projection r;
    const double pu = proj[0] * x + proj[1] * y + proj[2] * z + proj[3];
    const double pv = proj[4] * x + proj[5] * y + proj[6] * z + proj[7];
    const double pw = proj[8] * x + proj[9] * y + proj[10] * z + proj[11];
    r.depth = pw;
    if (std::abs(pw) < 1e-12) {
      r.degenerate = true;
      return r;
    }
    if (pw <= 0.0) return r;  // behind the camera
    r.u = pu / pw;
    r.v = pv / pw;
    r.ok = true;
    return r;
  }

  void validate() const {
    for (double v : proj)
      if (!std::isfinite(v)) throw ConfigError("camera calibration contains non-finite entries");
    require(image_width > 0 && image_height > 0, "camera calibration needs image dimensions");
  }
};

namespace calib_detail {

inline std::map<std::string, std::vector<double>> parse_key_values(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open calibration file: " + path);
  std::map<std::string, std::vector<double>> kv;
  std::string line;
  while (std::getline(is, line)) {
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    const std::string key = line.substr(0, colon);
    std::istringstream rest(line.substr(colon + 1));
    std::vector<double> vals;
    double v;
    while (rest >> v) vals.push_back(v);
    if (!vals.empty()) kv[key] = std::move(vals);
  }
  return kv;
}

using Mat4 = std::array<double, 16>;

inline Mat4 identity4() {
  Mat4 m{};
  m[0] = m[5] = m[10] = m[15] = 1.0;
  return m;
}

inline Mat4 mat4_mul(const Mat4& a, const Mat4& b) {
  Mat4 c{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += a[4 * i + k] * b[4 * k + j];
      c[4 * i + j] = s;
    }
  return c;
}

}  // namespace calib_detail

// KITTI-style calibration text: proj = P_rect * pad4(R_rect) * pad4(T_velo_to_cam).
// Image dimensions are not stored in these files; callers supply them from
// the annotation image.
inline CameraCalibration load_kitti_calibration(const std::string& path, int image_width,
                                                int image_height,
                                                const std::string& camera_key = "P2") {
  auto kv = calib_detail::parse_key_values(path);
  auto need = [&](const std::string& key, std::size_t count) -> const std::vector<double>& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("calibration file " + path + " lacks key " + key);
    if (it->second.size() != count)
      throw FormatError("calibration key " + key + " in " + path + " has " +
                        std::to_string(it->second.size()) + " values, expected " +
                        std::to_string(count));
    return it->second;
  };
  const auto& p = need(camera_key, 12);
  const auto& r = need("R0_rect", 9);
  const auto& t = need("Tr_velo_to_cam", 12);

  calib_detail::Mat4 r4 = calib_detail::identity4();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r4[4 * i + j] = r[3 * i + j];
  calib_detail::Mat4 t4 = calib_detail::identity4();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) t4[4 * i + j] = t[4 * i + j];
  const calib_detail::Mat4 rt = calib_detail::mat4_mul(r4, t4);

  CameraCalibration calib;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += p[4 * i + k] * rt[4 * k + j];
      calib.proj[4 * i + j] = s;
    }
  calib.image_width = image_width;
  calib.image_height = image_height;
  calib.validate();
  return calib;
}

inline void save_kitti_calibration(const std::string& path, const std::array<double, 12>& p_rect,
                                   const std::array<double, 9>& r_rect,
                                   const std::array<double, 12>& tr_velo_to_cam) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.precision(17);
  os << "P2:";
  for (double v : p_rect) os << " " << v;
  os << "\nR0_rect:";
  for (double v : r_rect) os << " " << v;
  os << "\nTr_velo_to_cam:";
  for (double v : tr_velo_to_cam) os << " " << v;
  os << "\n";
  if (!os) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Point labeling by projection into the perspective annotation.
// ---------------------------------------------------------------------------

struct ProjectionStats {
  std::size_t behind_camera = 0;
  std::size_t outside_image = 0;
  std::size_t invalid_pixel = 0;
  std::size_t degenerate = 0;
};

inline PointCloud project_points(const PointCloud& cloud, const CameraCalibration& calib,
                                 const PerspectiveAnnotation& ann,
                                 ProjectionStats* stats = nullptr) {
  calib.validate();
  require(ann.width == calib.image_width && ann.height == calib.image_height,
          "annotation dimensions do not match the calibration image size");
  PointCloud out = cloud;
  out.labels = std::vector<Label>(cloud.size(), Label::Unknown);
  ProjectionStats st;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const LidarPoint& p = cloud.points[i];
    const auto pr = calib.project(p.x, p.y, p.z);
    if (pr.degenerate) {
      ++st.degenerate;
      continue;
    }
    if (!pr.ok) {
      ++st.behind_camera;
      continue;
    }
    const long col = std::lround(pr.u);
    const long row = std::lround(pr.v);
    if (col < 0 || col >= ann.width || row < 0 || row >= ann.height) {
      ++st.outside_image;
      continue;
    }
    if (!ann.valid(static_cast<int>(row), static_cast<int>(col))) {
      ++st.invalid_pixel;
      continue;
    }
    (*out.labels)[i] =
        ann.road(static_cast<int>(row), static_cast<int>(col)) ? Label::Road : Label::NotRoad;
  }
  if (stats) *stats = st;
  return out;
}

// ---------------------------------------------------------------------------
// Sector densification: linear interpolation between range-consecutive points
// within narrow azimuth sectors. Input points are preserved as a prefix of
// the output; synthetic points are appended.
// ---------------------------------------------------------------------------

inline PointCloud densify_sectors(const PointCloud& cloud, double sector_width_deg = 0.2,
                                  double max_gap = 2.0, double step = 0.1) {
  require(sector_width_deg > 0.0 && step > 0.0, "sector width and step must be positive");
  cloud.check_labels();
  PointCloud out = cloud;
  if (cloud.size() < 2) return out;

  const double sector_rad = sector_width_deg * (3.14159265358979323846 / 180.0);
  const int n_sectors =
      std::max(1, static_cast<int>(std::ceil(2.0 * 3.14159265358979323846 / sector_rad)));

  struct Entry {
    double range;
    std::size_t idx;
  };
  std::vector<std::vector<Entry>> sectors(static_cast<std::size_t>(n_sectors));
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const LidarPoint& p = cloud.points[i];
    const double r = std::hypot(p.x, p.y);
    if (r < 1e-9) continue;
    const double az = std::atan2(p.y, p.x) + 3.14159265358979323846;
    int s = static_cast<int>(az / sector_rad);
    if (s >= n_sectors) s = n_sectors - 1;
    sectors[static_cast<std::size_t>(s)].push_back({r, i});
  }

  const bool labeled = cloud.labels.has_value();
  for (auto& sec : sectors) {
    std::sort(sec.begin(), sec.end(), [](const Entry& a, const Entry& b) {
      return a.range < b.range || (a.range == b.range && a.idx < b.idx);
    });
    for (std::size_t k = 1; k < sec.size(); ++k) {
      const std::size_t ia = sec[k - 1].idx, ib = sec[k].idx;
      const double gap = sec[k].range - sec[k - 1].range;
      if (gap <= 0.0 || gap > max_gap) continue;
      if (labeled && (*cloud.labels)[ia] != (*cloud.labels)[ib]) continue;
      const LidarPoint& a = cloud.points[ia];
      const LidarPoint& b = cloud.points[ib];
      for (int k = 1; k * step < gap - 1e-12; ++k) {
        const double t = (k * step) / gap;
        LidarPoint q;
        q.x = a.x + t * (b.x - a.x);
        q.y = a.y + t * (b.y - a.y);
        q.z = a.z + t * (b.z - a.z);
        q.reflectivity = a.reflectivity + t * (b.reflectivity - a.reflectivity);
        out.points.push_back(q);
        if (labeled) out.labels->push_back((*cloud.labels)[ia]);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Labeled points -> top-view label grid: per-cell majority vote over labeled
// points, ties resolved toward Road; cells without labeled points stay
// Unknown.
// ---------------------------------------------------------------------------

inline TopViewLabel labels_to_topview(const PointCloud& cloud, const GridSpec& grid) {
  require(cloud.labels.has_value(), "labels_to_topview requires a labeled cloud");
  cloud.check_labels();
  grid.validate();
  const int H = grid.height_px(), W = grid.width_px();
  std::vector<int> road(static_cast<std::size_t>(H) * W, 0);
  std::vector<int> labeled(static_cast<std::size_t>(H) * W, 0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Label lab = (*cloud.labels)[i];
    if (lab == Label::Unknown) continue;
    int row, col;
    if (!grid.cell_of(cloud.points[i].x, cloud.points[i].y, &row, &col)) continue;
    const std::size_t j = static_cast<std::size_t>(row) * W + col;
    labeled[j] += 1;
    if (lab == Label::Road) road[j] += 1;
  }
  TopViewLabel out(H, W);
  for (std::size_t j = 0; j < out.size(); ++j) {
    if (labeled[j] == 0) continue;  // Unknown
    out.cells[j] = 2 * road[j] >= labeled[j] ? Label::Road : Label::NotRoad;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Inverse perspective mapping: each grid-cell center, assumed to lie on the
// flat ground plane, is projected into the image and sampled at the nearest
// pixel. Off-image, behind-camera, and invalid pixels give Unknown.
// ---------------------------------------------------------------------------

inline TopViewLabel ipm_topview(const PerspectiveAnnotation& ann, const CameraCalibration& calib,
                                const GridSpec& grid, double ground_height) {
  calib.validate();
  grid.validate();
  require(ann.width == calib.image_width && ann.height == calib.image_height,
          "annotation dimensions do not match the calibration image size");
  const int H = grid.height_px(), W = grid.width_px();
  TopViewLabel out(H, W);
  for (int r = 0; r < H; ++r) {
    const double x = grid.row_center_x(r);
    for (int c = 0; c < W; ++c) {
      const double y = grid.col_center_y(c);
      const auto pr = calib.project(x, y, ground_height);
      if (!pr.ok) continue;
      const long col = std::lround(pr.u);
      const long row = std::lround(pr.v);
      if (col < 0 || col >= ann.width || row < 0 || row >= ann.height) continue;
      if (!ann.valid(static_cast<int>(row), static_cast<int>(col))) continue;
      out.at(r, c) =
          ann.road(static_cast<int>(row), static_cast<int>(col)) ? Label::Road : Label::NotRoad;
    }
  }
  return out;
}

}  // namespace lodnn

#endif  // LODNN_ANNOTATION_HPP
