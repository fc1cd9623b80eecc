// LIDAR point clouds: the 16-byte Velodyne binary format, optional per-point
// class labels, and the geometric transforms used for training-set
// augmentation (z-rotation, x-axis mirroring, the 42-variant set).
#ifndef LODNN_POINT_CLOUD_HPP
#define LODNN_POINT_CLOUD_HPP

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "lodnn/common.hpp"

namespace lodnn {

// Coordinates are kept in double precision; geometry transforms must not
// accumulate storage roundoff across compositions. File I/O stays binary32.
struct LidarPoint {
  double x = 0.0;  // meters, forward
  double y = 0.0;  // meters, left
  double z = 0.0;  // meters, up
  double reflectivity = 0.0;  // unitless, in [0, 1]
};

struct PointCloud {
  std::vector<LidarPoint> points;
  std::optional<std::vector<Label>> labels;  // one tag per point when present

  std::size_t size() const { return points.size(); }

  void check_labels() const {
    if (labels && labels->size() != points.size())
      throw ContractViolation("point cloud labels must cover every point exactly once");
  }
};

// ---------------------------------------------------------------------------
// Velodyne binary I/O: consecutive 16-byte records of four little-endian
// IEEE-754 binary32 values (x, y, z, reflectivity), no header.
// ---------------------------------------------------------------------------

struct LoadStats {
  std::size_t clamped_reflectivity = 0;
};

inline PointCloud load_velodyne_bin(const std::string& path, LoadStats* stats = nullptr) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw IoError("cannot open point cloud file: " + path);
  const std::streamoff bytes = is.tellg();
  if (bytes % 16 != 0)
    throw FormatError("malformed point cloud file " + path + ": length " +
                      std::to_string(bytes) + " is not a multiple of 16");
  is.seekg(0, std::ios::beg);
  const std::size_t n = static_cast<std::size_t>(bytes / 16);
  std::vector<float> raw(n * 4);
  if (n > 0 && !is.read(reinterpret_cast<char*>(raw.data()), bytes))
    throw IoError("read failed: " + path);

  PointCloud cloud;
  cloud.points.resize(n);
  std::size_t clamped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const float* r = raw.data() + 4 * i;
    for (int k = 0; k < 4; ++k)
      if (!std::isfinite(r[k]))
        throw FormatError("corrupt record " + std::to_string(i) + " in " + path +
                          ": non-finite value");
    LidarPoint& p = cloud.points[i];
    p.x = r[0];
    p.y = r[1];
    p.z = r[2];
    double refl = r[3];
    if (refl < 0.0 || refl > 1.0) {
      refl = refl < 0.0 ? 0.0 : 1.0;
      ++clamped;
    }
    p.reflectivity = refl;
  }
  if (stats) stats->clamped_reflectivity = clamped;
  return cloud;
}

inline void save_velodyne_bin(const std::string& path, const PointCloud& cloud) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  std::vector<float> raw;
  raw.reserve(cloud.size() * 4);
  for (const LidarPoint& p : cloud.points) {
    raw.push_back(static_cast<float>(p.x));
    raw.push_back(static_cast<float>(p.y));
    raw.push_back(static_cast<float>(p.z));
    raw.push_back(static_cast<float>(p.reflectivity));
  }
  os.write(reinterpret_cast<const char*>(raw.data()),
           static_cast<std::streamsize>(raw.size() * sizeof(float)));
  if (!os) throw IoError("write failed: " + path);
}

// Sidecar label file: one byte per point (0 = NotRoad, 1 = Road, 2 = Unknown).
inline void save_point_labels(const std::string& path, const std::vector<Label>& labels) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  for (Label l : labels) {
    const char b = static_cast<char>(l);
    os.write(&b, 1);
  }
  if (!os) throw IoError("write failed: " + path);
}

inline std::vector<Label> load_point_labels(const std::string& path, std::size_t expected_count) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw IoError("cannot open label file: " + path);
  const std::streamoff bytes = is.tellg();
  if (static_cast<std::size_t>(bytes) != expected_count)
    throw FormatError("label file " + path + " holds " + std::to_string(bytes) +
                      " tags, expected " + std::to_string(expected_count));
  is.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> raw(expected_count);
  if (expected_count > 0 && !is.read(reinterpret_cast<char*>(raw.data()), bytes))
    throw IoError("read failed: " + path);
  std::vector<Label> labels(expected_count);
  for (std::size_t i = 0; i < expected_count; ++i) {
    if (raw[i] > 2)
      throw FormatError("label file " + path + ": invalid tag at index " + std::to_string(i));
    labels[i] = static_cast<Label>(raw[i]);
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Geometric transforms. All are pure; labels ride along positionally.
// ---------------------------------------------------------------------------

inline PointCloud rotate_z(const PointCloud& cloud, double angle_deg) {
  require(std::isfinite(angle_deg), "rotation angle must be finite");
  cloud.check_labels();
  const double theta = angle_deg * (3.14159265358979323846 / 180.0);
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const LidarPoint& p : cloud.points) {
    LidarPoint q = p;
    q.x = p.x * c - p.y * s;
    q.y = p.x * s + p.y * c;
    out.points.push_back(q);
  }
  out.labels = cloud.labels;
  return out;
}

inline PointCloud mirror_x(const PointCloud& cloud) {
  cloud.check_labels();
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const LidarPoint& p : cloud.points) {
    LidarPoint q = p;
    q.y = -p.y;
    out.points.push_back(q);
  }
  out.labels = cloud.labels;
  return out;
}

// The variant grid used to enlarge the training set: rotations from -30 to
// +30 degrees in 3-degree steps, each plain and mirrored. Ordering is fixed:
// angle ascending, unmirrored before mirrored.
struct AugmentationVariant {
  double angle_deg;
  bool mirrored;
};

inline std::vector<AugmentationVariant> augmentation_variants() {
  std::vector<AugmentationVariant> v;
  for (int a = -30; a <= 30; a += 3) {
    v.push_back({static_cast<double>(a), false});
    v.push_back({static_cast<double>(a), true});
  }
  return v;
}

inline PointCloud apply_variant(const PointCloud& cloud, const AugmentationVariant& v) {
  PointCloud out = v.angle_deg == 0.0 ? cloud : rotate_z(cloud, v.angle_deg);
  if (v.mirrored) out = mirror_x(out);
  return out;
}

inline std::vector<PointCloud> augmentation_set(const PointCloud& cloud) {
  std::vector<PointCloud> out;
  const auto variants = augmentation_variants();
  out.reserve(variants.size());
  for (const auto& v : variants) out.push_back(apply_variant(cloud, v));
  return out;
}

}  // namespace lodnn

#endif  // LODNN_POINT_CLOUD_HPP
