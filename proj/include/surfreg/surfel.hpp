#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "surfreg/geom.hpp"

namespace surfreg {

/// Pinhole virtual camera used to assign perspective uncertainty. A
/// non-positive `C` selects per-cloud normalization (max radius 0.95).
struct VirtualCamera {
  int width = 0;
  int height = 0;
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  Vec3 principal_axis = Vec3::UnitZ();
  double rho_min = 1.0 / 80.0;
  double rho_max = 1.0 / 0.5;
  double C = 0.0;

  /// 90 degree horizontal field of view on a 640x480 virtual image.
  static VirtualCamera lidar_default();

  void validate() const;
};

struct Surfel {
  Vec3 position = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  double radius = 0.0;     // normalized uncertainty in [0, 1)
  double intensity = 1.0;  // in [0, 1]
};

struct SurfelCloud {
  std::vector<Surfel> surfels;
  std::string frame_id;

  std::size_t size() const { return surfels.size(); }
  bool empty() const { return surfels.empty(); }
  std::vector<Vec3> positions() const;
};

struct DepthImage {
  int width = 0;
  int height = 0;
  std::vector<double> depth_m;  // row-major, 0 marks an invalid pixel

  double at(int u, int v) const { return depth_m[static_cast<std::size_t>(v) * width + u]; }
};

class EmptyCloudError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class DegenerateGeometryError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct SurfelOptions {
  int k = 16;                    // PCA neighbourhood size
  double theta_max_deg = 85.0;   // clamp before tan()
  double max_radius = 0.95;      // target of per-cloud normalization
  double density_min = 0.5;      // clamp of the point-density factor
  double density_max = 2.0;
};

inline constexpr double kRadiusCeiling = 1.0 - 1e-6;

/// Angle between a viewing ray and the principal axis, in [0, pi].
double view_angle(const Vec3& ray, const Vec3& axis);

/// Clamp inverse depth to the camera's valid range.
double truncate_inverse_depth(double rho, const VirtualCamera& cam);

/// gamma * C * exp(-rho_hat) / (1 + exp(-tan(theta))), theta clamped to
/// theta_max, result clamped to [0, 1 - 1e-6].
double surfel_radius(double gamma, double theta, double rho_hat, double C,
                     double theta_max_deg = 85.0);

struct NormalEstimate {
  std::vector<Vec3> normals;
  std::vector<bool> degenerate;  // isotropic or rank-deficient neighbourhood
};

/// PCA normals from the k nearest points (the point itself included; k is
/// capped at the cloud size), oriented so n . (viewpoint - x) >= 0.
/// Degenerate neighbourhoods are flagged and fall back to the unit direction
/// toward the viewpoint.
NormalEstimate normals_knn_pca(std::span<const Vec3> points, int k, const Vec3& viewpoint);

/// Mean distance to the k nearest other points.
std::vector<double> mean_knn_distance(std::span<const Vec3> points, int k);

/// clamp(d_k / median(d_k), lo, hi) per point.
std::vector<double> density_factor(std::span<const Vec3> points, int k, double lo = 0.5,
                                   double hi = 2.0);

/// Unproject every valid pixel through the pinhole model. Throws
/// EmptyCloudError with fewer than k valid pixels.
SurfelCloud surfels_from_depth(const DepthImage& depth, const VirtualCamera& cam,
                               std::optional<std::span<const double>> intensity = std::nullopt,
                               const SurfelOptions& opt = {});

/// Surfels from a sensor-frame point cloud (sensor at the origin). Throws
/// DegenerateGeometryError for fewer than three or collinear points.
SurfelCloud surfels_from_points(std::span<const Vec3> points,
                                std::optional<std::span<const double>> intensities,
                                const VirtualCamera& cam, const SurfelOptions& opt = {});

struct DownsampleResult {
  SurfelCloud cloud;
  bool padded = false;  // output repeats surfels to reach target_n
  double voxel_edge = 0.0;
};

/// Exactly target_n surfels: the largest voxel edge with at least target_n
/// occupied voxels, the lowest-radius surfel per voxel, then the target_n
/// lowest radii. Output keeps input order.
DownsampleResult voxel_downsample(const SurfelCloud& cloud, std::size_t target_n);

/// Rigidly moves positions and normals; radius and intensity are kept.
SurfelCloud transformed(const SurfelCloud& cloud, const RigidTransform& t);

}  // namespace surfreg
