// Synthetic LIDAR scenes with exact ground truth: a rotating scanner is
// ray-cast against a piecewise-linear road corridor (optionally edged by
// raised shoulders) and box obstacles. The generator emits the same file
// formats the real-data path reads -- Velodyne binary, calibration text,
// perspective ground-truth PNG -- plus an exact top-view label grid
// rasterized from geometry rather than from points.
#ifndef LODNN_SYNTH_HPP
#define LODNN_SYNTH_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lodnn/annotation.hpp"
#include "lodnn/common.hpp"
#include "lodnn/label_grid.hpp"
#include "lodnn/point_cloud.hpp"
#include "lodnn/rasterizer.hpp"

namespace lodnn {

struct ObstacleBox {
  double center_x = 0.0, center_y = 0.0;  // meters, footprint center
  double size_x = 1.0, size_y = 1.0;      // meters, footprint extent
  double height = 1.0;                    // meters above the road surface
};

struct ScannerSpec {
  int rings = 64;
  double elevation_min_deg = -24.8;
  double elevation_max_deg = 2.0;
  double azimuth_step_deg = 0.2;
  double azimuth_min_deg = -180.0;
  double azimuth_max_deg = 180.0;
};

struct CameraSpec {
  double focal = 800.0;       // pixels
  int image_width = 1200;
  int image_height = 500;
  double center_u = 600.0;    // principal point
  double center_v = 180.0;
  // Camera center in LIDAR coordinates; looks along +x with image x right
  // (-y), image y down (-z).
  double pos_x = 0.25, pos_y = 0.0, pos_z = -0.08;
};

struct SceneSpec {
  std::vector<std::array<double, 2>> centerline = {{-20.0, 0.0}, {60.0, 0.0}};
  double road_width = 8.0;
  double curb_height = 0.0;   // shoulder elevation above the road surface
  std::vector<ObstacleBox> boxes;
  double ground_z = 1.73;     // sensor height above the road surface
  ScannerSpec scanner;
  double range_noise_sigma = 0.0;  // meters
  std::uint64_t seed = 0;
  CameraSpec camera;
  // Height below which obstacle surfaces are still painted over by the
  // road-region polygon in the perspective annotation, mimicking the loose
  // object boundaries of human-annotated ground truth.
  double annotation_paint_over = 0.12;

  void validate() const {
    if (!(road_width > 0.0)) throw ConfigError("scene: road width must be positive");
    if (!(scanner.azimuth_step_deg > 0.0)) throw ConfigError("scene: azimuth step must be positive");
    if (range_noise_sigma < 0.0) throw ConfigError("scene: noise sigma must be >= 0");
    if (centerline.size() < 2) throw ConfigError("scene: centerline needs at least 2 vertices");
  }
};

struct SynthScene {
  PointCloud cloud;                 // labeled per point, exact from geometry
  TopViewLabel exact_truth;         // rasterized from geometry
  PerspectiveAnnotation annotation;
  CameraCalibration calibration;
};

namespace synth_detail {

constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * (kPi / 180.0); }

inline double dist_sq_to_segment(double px, double py, const std::array<double, 2>& a,
                                 const std::array<double, 2>& b) {
  const double vx = b[0] - a[0], vy = b[1] - a[1];
  const double wx = px - a[0], wy = py - a[1];
  const double vv = vx * vx + vy * vy;
  double t = vv > 0.0 ? (wx * vx + wy * vy) / vv : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (a[0] + t * vx), dy = py - (a[1] + t * vy);
  return dx * dx + dy * dy;
}

inline bool inside_corridor(const SceneSpec& spec, double x, double y) {
  const double half = 0.5 * spec.road_width;
  for (std::size_t i = 0; i + 1 < spec.centerline.size(); ++i)
    if (dist_sq_to_segment(x, y, spec.centerline[i], spec.centerline[i + 1]) <= half * half)
      return true;
  return false;
}

inline bool inside_box_footprint(const SceneSpec& spec, double x, double y) {
  for (const ObstacleBox& b : spec.boxes)
    if (std::abs(x - b.center_x) <= 0.5 * b.size_x && std::abs(y - b.center_y) <= 0.5 * b.size_y)
      return true;
  return false;
}

enum class Material { None, Road, Shoulder, CurbFace, Box };

struct Hit {
  double t = 0.0;  // distance along the unit direction
  Material material = Material::None;
};

// Slab-method ray/AABB intersection; returns the entry distance.
inline std::optional<double> ray_box(const double o[3], const double d[3], const ObstacleBox& b,
                                     double road_z) {
  const double lo[3] = {b.center_x - 0.5 * b.size_x, b.center_y - 0.5 * b.size_y, road_z};
  const double hi[3] = {b.center_x + 0.5 * b.size_x, b.center_y + 0.5 * b.size_y,
                        road_z + b.height};
  double t_near = 0.0, t_far = 1e30;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(d[k]) < 1e-15) {
      if (o[k] < lo[k] || o[k] > hi[k]) return std::nullopt;
      continue;
    }
    double t0 = (lo[k] - o[k]) / d[k];
    double t1 = (hi[k] - o[k]) / d[k];
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
    if (t_near > t_far) return std::nullopt;
  }
  if (t_far <= 1e-9) return std::nullopt;
  return t_near > 1e-9 ? t_near : t_far;
}

// First terrain hit: shoulder plane outside the corridor, road plane inside,
// and the vertical face where a ray crosses the corridor edge between the
// two levels (located by bisection on the corridor indicator).
inline Hit ray_terrain(const SceneSpec& spec, const double o[3], const double d[3]) {
  Hit none;
  if (d[2] >= -1e-15) return none;  // ascending rays never reach the ground
  const double road_z = -spec.ground_z;
  const double shoulder_z = road_z + spec.curb_height;
  const double t_sh = (shoulder_z - o[2]) / d[2];
  const double t_rd = (road_z - o[2]) / d[2];
  if (t_sh < 0.0) return none;
  const double sx = o[0] + t_sh * d[0], sy = o[1] + t_sh * d[1];
  if (!inside_corridor(spec, sx, sy)) return {t_sh, Material::Shoulder};
  if (spec.curb_height <= 0.0) return {t_rd, Material::Road};
  const double rx = o[0] + t_rd * d[0], ry = o[1] + t_rd * d[1];
  if (inside_corridor(spec, rx, ry)) return {t_rd, Material::Road};
  // inside at shoulder level, outside at road level: the ray meets the face
  double lo = t_sh, hi = t_rd;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (inside_corridor(spec, o[0] + mid * d[0], o[1] + mid * d[1]))
      lo = mid;
    else
      hi = mid;
  }
  return {0.5 * (lo + hi), Material::CurbFace};
}

inline Hit cast_ray(const SceneSpec& spec, const double o[3], const double d[3]) {
  Hit best = ray_terrain(spec, o, d);
  const double road_z = -spec.ground_z;
  for (const ObstacleBox& b : spec.boxes) {
    const auto t = ray_box(o, d, b, road_z);
    if (t && (best.material == Material::None || *t < best.t)) best = {*t, Material::Box};
  }
  return best;
}

inline double material_reflectivity(Material m, double u) {
  double base = 0.0;
  switch (m) {
    case Material::Road: base = 0.45; break;
    case Material::Shoulder: base = 0.25; break;
    case Material::CurbFace: base = 0.35; break;
    case Material::Box: base = 0.75; break;
    case Material::None: return 0.0;
  }
  return std::clamp(base + 0.08 * (u - 0.5), 0.0, 1.0);
}

}  // namespace synth_detail

// Composite calibration for the synthetic camera (velo -> rectified image).
inline CameraCalibration make_camera_calibration(const CameraSpec& cam) {
  // cam axes: x = -y_velo (right), y = -z_velo (down), z = x_velo (forward)
  const double R[9] = {0, -1, 0, 0, 0, -1, 1, 0, 0};
  const double C[3] = {cam.pos_x, cam.pos_y, cam.pos_z};
  double t[3];
  for (int i = 0; i < 3; ++i) t[i] = -(R[3 * i] * C[0] + R[3 * i + 1] * C[1] + R[3 * i + 2] * C[2]);
  CameraCalibration calib;
  // proj = K * [R | t] with K = [[f,0,cu],[0,f,cv],[0,0,1]]
  const double K[9] = {cam.focal, 0, cam.center_u, 0, cam.focal, cam.center_v, 0, 0, 1};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += K[3 * i + k] * (j < 3 ? R[3 * k + j] : t[k]);
      calib.proj[4 * i + j] = s;
    }
  calib.image_width = cam.image_width;
  calib.image_height = cam.image_height;
  return calib;
}

// KITTI-format calibration pieces for the synthetic camera.
inline void save_synth_calibration(const std::string& path, const CameraSpec& cam) {
  const std::array<double, 12> p_rect = {cam.focal, 0, cam.center_u, 0, 0, cam.focal,
                                         cam.center_v, 0, 0, 0, 1, 0};
  const std::array<double, 9> r_rect = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  const double R[9] = {0, -1, 0, 0, 0, -1, 1, 0, 0};
  const double C[3] = {cam.pos_x, cam.pos_y, cam.pos_z};
  std::array<double, 12> tr{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) tr[4 * i + j] = R[3 * i + j];
    tr[4 * i + 3] = -(R[3 * i] * C[0] + R[3 * i + 1] * C[1] + R[3 * i + 2] * C[2]);
  }
  save_kitti_calibration(path, p_rect, r_rect, tr);
}

// Exact top-view truth from geometry: each cell is supersampled on a 10x10
// sub-grid and labeled by majority (ties toward Road, matching the labeled
// point rasterization).
inline TopViewLabel exact_topview_truth(const SceneSpec& spec, const GridSpec& grid) {
  grid.validate();
  const int H = grid.height_px(), W = grid.width_px();
  TopViewLabel out(H, W);
  const int ss = 10;
  for (int r = 0; r < H; ++r) {
    const double x0 = grid.x_min + (H - 1 - r) * grid.cell_size;
    for (int c = 0; c < W; ++c) {
      const double y0 = grid.y_min + (W - 1 - c) * grid.cell_size;
      int road = 0;
      for (int i = 0; i < ss; ++i)
        for (int j = 0; j < ss; ++j) {
          const double x = x0 + (i + 0.5) * grid.cell_size / ss;
          const double y = y0 + (j + 0.5) * grid.cell_size / ss;
          if (synth_detail::inside_corridor(spec, x, y) &&
              !synth_detail::inside_box_footprint(spec, x, y))
            ++road;
        }
      out.at(r, c) = 2 * road >= ss * ss ? Label::Road : Label::NotRoad;
    }
  }
  return out;
}

// Perspective ground truth, rendered with the same geometry the scanner sees.
// A pixel is valid when its ray meets a surface. It is labeled road when the
// flat-ground backprojection of the ray lands in the corridor and the visible
// surface sits no more than annotation_paint_over above the road plane --
// obstacle bases and low curbs get painted over exactly as loosely drawn
// road-region polygons do.
inline PerspectiveAnnotation render_annotation(const SceneSpec& spec) {
  const CameraSpec& cam = spec.camera;
  PerspectiveAnnotation ann(cam.image_width, cam.image_height);
  const double R[9] = {0, -1, 0, 0, 0, -1, 1, 0, 0};  // velo -> cam
  const double o[3] = {cam.pos_x, cam.pos_y, cam.pos_z};
  const double road_z = -spec.ground_z;
  for (int v = 0; v < cam.image_height; ++v) {
    for (int u = 0; u < cam.image_width; ++u) {
      const double dc[3] = {(u - cam.center_u) / cam.focal, (v - cam.center_v) / cam.focal, 1.0};
      // dir_velo = R^T * dir_cam
      double d[3] = {R[0] * dc[0] + R[3] * dc[1] + R[6] * dc[2],
                     R[1] * dc[0] + R[4] * dc[1] + R[7] * dc[2],
                     R[2] * dc[0] + R[5] * dc[1] + R[8] * dc[2]};
      const double norm = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
      for (double& k : d) k /= norm;
      const auto hit = synth_detail::cast_ray(spec, o, d);
      if (hit.material == synth_detail::Material::None) {
        ann.set(v, u, false, false);
        continue;
      }
      bool road = false;
      const double hit_z = o[2] + hit.t * d[2];
      if (hit_z - road_z <= spec.annotation_paint_over && d[2] < -1e-15) {
        const double t_flat = (road_z - o[2]) / d[2];
        const double fx = o[0] + t_flat * d[0], fy = o[1] + t_flat * d[1];
        road = synth_detail::inside_corridor(spec, fx, fy);
      }
      ann.set(v, u, true, road);
    }
  }
  return ann;
}

// Full scene: ray-cast scan with exact per-point labels, exact top-view
// truth, rendered annotation, and the matching calibration.
inline SynthScene generate(const SceneSpec& spec, const GridSpec& grid) {
  spec.validate();
  SynthScene scene;
  scene.calibration = make_camera_calibration(spec.camera);
  scene.annotation = render_annotation(spec);
  scene.exact_truth = exact_topview_truth(spec, grid);

  const ScannerSpec& sc = spec.scanner;
  std::vector<Label> labels;
  const double o[3] = {0.0, 0.0, 0.0};
  const int azimuth_steps = static_cast<int>(
      std::floor((sc.azimuth_max_deg - sc.azimuth_min_deg) / sc.azimuth_step_deg + 1e-9));
  std::uint64_t ray_index = 0;
  for (int ring = 0; ring < sc.rings; ++ring) {
    const double elev = synth_detail::deg2rad(
        sc.rings > 1 ? sc.elevation_min_deg + (sc.elevation_max_deg - sc.elevation_min_deg) *
                                                  ring / (sc.rings - 1)
                     : sc.elevation_min_deg);
    const double ce = std::cos(elev), se = std::sin(elev);
    for (int a = 0; a < azimuth_steps; ++a, ++ray_index) {
      const double az = synth_detail::deg2rad(sc.azimuth_min_deg + a * sc.azimuth_step_deg);
      const double d[3] = {ce * std::cos(az), ce * std::sin(az), se};
      const auto hit = synth_detail::cast_ray(spec, o, d);
      if (hit.material == synth_detail::Material::None) continue;
      double range = hit.t;
      if (spec.range_noise_sigma > 0.0)
        range += spec.range_noise_sigma * gaussian01(counter_hash(spec.seed, 0xA1, ray_index),
                                                     counter_hash(spec.seed, 0xA2, ray_index));
      if (range <= 0.1) continue;
      LidarPoint p;
      p.x = o[0] + range * d[0];
      p.y = o[1] + range * d[1];
      p.z = o[2] + range * d[2];
      p.reflectivity = synth_detail::material_reflectivity(
          hit.material, uniform01(counter_hash(spec.seed, 0xB3, ray_index)));
      scene.cloud.points.push_back(p);
      labels.push_back(hit.material == synth_detail::Material::Road ? Label::Road
                                                                    : Label::NotRoad);
    }
  }
  scene.cloud.labels = std::move(labels);
  return scene;
}

// Randomized desk-scale scene family: gently bending corridors of varying
// width, raised shoulders, and up to two boxes parked on the road.
inline SceneSpec random_scene(std::uint64_t seed, int index) {
  SceneSpec spec;
  spec.seed = counter_hash(seed, 0x5C, index);
  auto draw = [&](int salt, double lo, double hi) {
    return uniform_range(counter_hash(spec.seed, 0xD0, salt), lo, hi);
  };
  spec.road_width = draw(1, 5.5, 9.0);
  spec.curb_height = draw(2, 0.12, 0.30);
  const double bend1 = draw(3, -2.0, 2.0);
  const double bend2 = bend1 + draw(4, -2.5, 2.5);
  spec.centerline = {{-20.0, 0.0}, {8.0, 0.0}, {16.0, bend1}, {30.0, bend2}};
  const int n_boxes = static_cast<int>(draw(5, 0.0, 3.0));
  for (int b = 0; b < n_boxes; ++b) {
    ObstacleBox box;
    box.center_x = draw(10 + 4 * b, 9.0, 19.0);
    box.center_y = draw(11 + 4 * b, -2.0, 2.0);
    box.size_x = draw(12 + 4 * b, 1.2, 2.5);
    box.size_y = draw(13 + 4 * b, 1.2, 2.2);
    box.height = draw(14 + 4 * b, 0.5, 1.3);
    spec.boxes.push_back(box);
  }
  spec.range_noise_sigma = 0.01;
  // forward hemisphere only; the desk grid ends at ~22 m
  spec.scanner.azimuth_min_deg = -90.0;
  spec.scanner.azimuth_max_deg = 90.0;
  return spec;
}

}  // namespace lodnn

#endif  // LODNN_SYNTH_HPP
