#include "surfreg/surfel.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <tuple>

#include "surfreg/knn.hpp"

namespace surfreg {

VirtualCamera VirtualCamera::lidar_default() {
  VirtualCamera cam;
  cam.width = 640;
  cam.height = 480;
  cam.fx = cam.fy = 320.0 / std::tan(deg2rad(45.0));
  cam.cx = 320.0;
  cam.cy = 240.0;
  return cam;
}

void VirtualCamera::validate() const {
  if (!(rho_min > 0.0 && rho_min < rho_max))
    throw std::invalid_argument("camera needs 0 < rho_min < rho_max");
  if (!(fx > 0.0 && fy > 0.0)) throw std::invalid_argument("camera focal lengths must be positive");
  if (std::abs(principal_axis.norm() - 1.0) > 1e-9)
    throw std::invalid_argument("camera principal axis must be unit length");
}

std::vector<Vec3> SurfelCloud::positions() const {
  std::vector<Vec3> out;
  out.reserve(surfels.size());
  for (const auto& s : surfels) out.push_back(s.position);
  return out;
}

double view_angle(const Vec3& ray, const Vec3& axis) {
  const double nr = ray.norm(), na = axis.norm();
  if (nr == 0.0 || na == 0.0) throw std::invalid_argument("view_angle: zero-length vector");
  // atan2 form of arccos(r.o / |r||o|), accurate near 0 and pi
  return std::atan2(ray.cross(axis).norm(), ray.dot(axis));
}

double truncate_inverse_depth(double rho, const VirtualCamera& cam) {
  return std::min(std::max(rho, cam.rho_min), cam.rho_max);
}

namespace {

double radius_shape(double theta, double rho_hat, double theta_max_deg) {
  const double th = std::min(theta, deg2rad(theta_max_deg));
  return std::exp(-rho_hat) / (1.0 + std::exp(-std::tan(th)));
}

double clamp_radius(double e) { return std::clamp(e, 0.0, kRadiusCeiling); }

struct RawSurfels {
  std::vector<Vec3> points;
  std::vector<double> gamma, theta, rho_hat, scale;
};

std::vector<double> normalized_intensity(std::optional<std::span<const double>> in, std::size_t n) {
  std::vector<double> g(n, 1.0);
  if (!in) return g;
  if (in->size() != n) throw std::invalid_argument("intensity count does not match point count");
  double mx = 0.0;
  for (double v : *in) {
    if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument("intensity must be finite and >= 0");
    mx = std::max(mx, v);
  }
  const double div = mx > 1.0 ? mx : 1.0;
  for (std::size_t i = 0; i < n; ++i) g[i] = (*in)[i] / div;
  return g;
}

SurfelCloud finish(const RawSurfels& raw, const VirtualCamera& cam, const SurfelOptions& opt) {
  const std::size_t n = raw.points.size();
  const NormalEstimate ne = normals_knn_pca(raw.points, opt.k, Vec3::Zero());

  std::vector<double> unscaled(n);
  double mx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    unscaled[i] = raw.gamma[i] * radius_shape(raw.theta[i], raw.rho_hat[i], opt.theta_max_deg) * raw.scale[i];
    if (!ne.degenerate[i]) mx = std::max(mx, unscaled[i]);
  }
  const double c = cam.C > 0.0 ? cam.C : (mx > 0.0 ? opt.max_radius / mx : 1.0);

  SurfelCloud out;
  out.surfels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Surfel& s = out.surfels[i];
    s.position = raw.points[i];
    s.normal = ne.normals[i];
    s.intensity = raw.gamma[i];
    s.radius = ne.degenerate[i] ? opt.max_radius : clamp_radius(c * unscaled[i]);
  }
  return out;
}

}  // namespace

double surfel_radius(double gamma, double theta, double rho_hat, double C, double theta_max_deg) {
  return clamp_radius(gamma * C * radius_shape(theta, rho_hat, theta_max_deg));
}

NormalEstimate normals_knn_pca(std::span<const Vec3> points, int k, const Vec3& viewpoint) {
  if (k < 3) throw std::invalid_argument("normals_knn_pca: k must be at least 3");
  if (points.size() < 3) throw std::invalid_argument("normals_knn_pca: need at least 3 points");
  const std::size_t n = points.size();
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), n);
  const KnnIndex index(points);

  NormalEstimate out;
  out.normals.assign(n, Vec3::UnitZ());
  std::vector<char> degen(n, 0);
  parallel_for(n, [&](std::size_t i) {
    // kk - 1 others plus the point itself
    const auto nb = index.query(points[i], kk - 1, static_cast<int>(i));
    Vec3 mean = points[i];
    for (int j : nb) mean += points[j];
    mean /= static_cast<double>(kk);
    Mat3 cov = (points[i] - mean) * (points[i] - mean).transpose();
    for (int j : nb) cov += (points[j] - mean) * (points[j] - mean).transpose();
    cov /= static_cast<double>(kk);

    const Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    const Vec3 ev = es.eigenvalues();  // ascending
    Vec3 normal = es.eigenvectors().col(0);
    const double scale = std::max(ev[2], 1e-300);
    const bool bad = (ev[1] - ev[0]) <= 1e-12 * scale;
    const Vec3 to_view = viewpoint - points[i];
    if (bad) {
      const double d = to_view.norm();
      normal = d > 0.0 ? Vec3(to_view / d) : Vec3::UnitZ();
      degen[i] = 1;
    } else {
      normal.normalize();
      if (normal.dot(to_view) < 0.0) normal = -normal;
    }
    out.normals[i] = normal;
  });
  out.degenerate.assign(degen.begin(), degen.end());
  return out;
}

std::vector<double> mean_knn_distance(std::span<const Vec3> points, int k) {
  const std::size_t n = points.size();
  if (n < 2) throw std::invalid_argument("mean_knn_distance: need at least 2 points");
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), n - 1);
  const KnnIndex index(points);
  std::vector<double> out(n);
  parallel_for(n, [&](std::size_t i) {
    double s = 0.0;
    for (int j : index.query(points[i], kk, static_cast<int>(i))) s += (points[j] - points[i]).norm();
    out[i] = s / static_cast<double>(kk);
  });
  return out;
}

std::vector<double> density_factor(std::span<const Vec3> points, int k, double lo, double hi) {
  const std::vector<double> d = mean_knn_distance(points, k);
  std::vector<double> sorted = d;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  const double ref = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
  std::vector<double> out(d.size(), 1.0);
  if (ref <= 0.0) return out;
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = std::clamp(d[i] / ref, lo, hi);
  return out;
}

SurfelCloud surfels_from_depth(const DepthImage& depth, const VirtualCamera& cam,
                               std::optional<std::span<const double>> intensity,
                               const SurfelOptions& opt) {
  cam.validate();
  if (depth.width <= 0 || depth.height <= 0 ||
      depth.depth_m.size() != static_cast<std::size_t>(depth.width) * depth.height)
    throw std::invalid_argument("depth image dimensions do not match its data");
  const auto all_gamma = normalized_intensity(intensity, depth.depth_m.size());

  RawSurfels raw;
  for (int v = 0; v < depth.height; ++v)
    for (int u = 0; u < depth.width; ++u) {
      const double d = depth.at(u, v);
      if (!(d > 0.0) || !std::isfinite(d)) continue;
      const Vec3 p((u - cam.cx) / cam.fx * d, (v - cam.cy) / cam.fy * d, d);
      raw.points.push_back(p);
      raw.gamma.push_back(all_gamma[static_cast<std::size_t>(v) * depth.width + u]);
      raw.theta.push_back(view_angle(p, cam.principal_axis));
      raw.rho_hat.push_back(truncate_inverse_depth(1.0 / d, cam));
      raw.scale.push_back(1.0);
    }
  if (raw.points.size() < static_cast<std::size_t>(std::max(opt.k, 3)))
    throw EmptyCloudError("depth image has " + std::to_string(raw.points.size()) +
                          " valid pixels, fewer than k = " + std::to_string(opt.k));
  return finish(raw, cam, opt);
}

SurfelCloud surfels_from_points(std::span<const Vec3> points,
                                std::optional<std::span<const double>> intensities,
                                const VirtualCamera& cam, const SurfelOptions& opt) {
  cam.validate();
  if (points.size() < 3) throw DegenerateGeometryError("need at least 3 points for surfels");
  for (const Vec3& p : points)
    if (!is_finite(p)) throw std::invalid_argument("point cloud has non-finite coordinates");
  {
    // rank check: all points collinear (or coincident) has no plane
    Vec3 mean = Vec3::Zero();
    for (const Vec3& p : points) mean += p;
    mean /= static_cast<double>(points.size());
    Mat3 cov = Mat3::Zero();
    for (const Vec3& p : points) cov += (p - mean) * (p - mean).transpose();
    const Vec3 ev = Eigen::SelfAdjointEigenSolver<Mat3>(cov).eigenvalues();
    if (ev[1] <= 1e-12 * std::max(ev[2], 1e-300))
      throw DegenerateGeometryError("point cloud is collinear or coincident");
  }

  RawSurfels raw;
  raw.points.assign(points.begin(), points.end());
  raw.gamma = normalized_intensity(intensities, points.size());
  raw.scale = density_factor(points, opt.k, opt.density_min, opt.density_max);
  for (const Vec3& p : points) {
    const double r = p.norm();
    raw.theta.push_back(r > 0.0 ? view_angle(p, cam.principal_axis) : 0.0);
    raw.rho_hat.push_back(truncate_inverse_depth(r > 0.0 ? 1.0 / r : cam.rho_max, cam));
  }
  return finish(raw, cam, opt);
}

DownsampleResult voxel_downsample(const SurfelCloud& cloud, std::size_t target_n) {
  if (cloud.empty()) throw EmptyCloudError("voxel_downsample on an empty cloud");
  if (target_n == 0) throw std::invalid_argument("voxel_downsample: target_n must be positive");
  const std::size_t n = cloud.size();
  Vec3 lo = cloud.surfels[0].position, hi = lo;
  for (const auto& s : cloud.surfels) {
    lo = lo.cwiseMin(s.position);
    hi = hi.cwiseMax(s.position);
  }
  const double extent = (hi - lo).maxCoeff();

  using Key = std::tuple<long long, long long, long long>;
  auto representatives = [&](double edge) {
    std::map<Key, std::size_t> best;
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3 rel = edge > 0.0 ? Vec3((cloud.surfels[i].position - lo) / edge) : Vec3::Zero();
      const Key key{static_cast<long long>(std::floor(rel.x())), static_cast<long long>(std::floor(rel.y())),
                    static_cast<long long>(std::floor(rel.z()))};
      auto [it, fresh] = best.emplace(key, i);
      if (!fresh && cloud.surfels[i].radius < cloud.surfels[it->second].radius) it->second = i;
    }
    std::vector<std::size_t> reps;
    reps.reserve(best.size());
    for (const auto& kv : best) reps.push_back(kv.second);
    return reps;
  };

  DownsampleResult res;
  res.cloud.frame_id = cloud.frame_id;
  double edge = 0.0;
  std::vector<std::size_t> reps;
  const double min_edge = extent * 1e-9;
  if (extent <= 0.0 || representatives(min_edge).size() < target_n) {
    edge = min_edge;
    reps = representatives(edge);
  } else {
    // Invariant: count(good) >= target_n > count(bad).
    double good = min_edge, bad = extent * 2.0;
    for (int it = 0; it < 64; ++it) {
      const double mid = std::sqrt(good * bad);
      if (representatives(mid).size() >= target_n) good = mid;
      else bad = mid;
    }
    edge = good;
    reps = representatives(edge);
  }
  res.voxel_edge = edge;

  std::sort(reps.begin(), reps.end(), [&](std::size_t a, std::size_t b) {
    const double ra = cloud.surfels[a].radius, rb = cloud.surfels[b].radius;
    return ra < rb || (ra == rb && a < b);
  });
  if (reps.size() >= target_n) {
    reps.resize(target_n);
    std::sort(reps.begin(), reps.end());
  } else {
    std::sort(reps.begin(), reps.end());
    res.padded = true;
    const std::size_t have = reps.size();
    for (std::size_t i = 0; reps.size() < target_n; ++i) reps.push_back(reps[i % have]);
  }
  res.cloud.surfels.reserve(target_n);
  for (std::size_t i : reps) res.cloud.surfels.push_back(cloud.surfels[i]);
  return res;
}

SurfelCloud transformed(const SurfelCloud& cloud, const RigidTransform& t) {
  const Mat3 r = t.rotation_matrix();
  SurfelCloud out = cloud;
  for (auto& s : out.surfels) {
    s.position = r * s.position + t.translation;
    s.normal = r * s.normal;
  }
  return out;
}

}  // namespace surfreg
