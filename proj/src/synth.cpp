#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "surfreg/dataset.hpp"

namespace surfreg {

std::string to_string(SceneType t) {
  switch (t) {
    case SceneType::planes: return "planes";
    case SceneType::boxes: return "boxes";
    case SceneType::quadrics: return "quadrics";
    case SceneType::mixed: return "mixed";
  }
  return "mixed";
}

SceneType scene_type_from_string(const std::string& s) {
  if (s == "planes") return SceneType::planes;
  if (s == "boxes") return SceneType::boxes;
  if (s == "quadrics" || s == "quadric") return SceneType::quadrics;
  if (s == "mixed") return SceneType::mixed;
  throw std::invalid_argument("unknown scene type '" + s + "'");
}

void SynthSpec::validate() const {
  if (n_pairs < 1) throw std::invalid_argument("n_pairs must be >= 1");
  if (n_surfels < 16) throw std::invalid_argument("n_surfels must be >= 16");
  if (!(overlap > 0.0 && overlap <= 1.0)) throw std::invalid_argument("overlap must be in (0, 1]");
  if (!(noise_sigma_m >= 0.0)) throw std::invalid_argument("noise sigma must be >= 0");
  if (!(max_rot_deg >= 0.0 && max_rot_deg <= 180.0))
    throw std::invalid_argument("max_rot_deg must be in [0, 180]");
  if (!(max_trans_m >= 0.0)) throw std::invalid_argument("max_trans_m must be >= 0");
}

namespace {

// Draws in a fixed order (argument evaluation order is unspecified).
Vec3 gaussian3(std::mt19937_64& rng, std::normal_distribution<double>& g) {
  const double x = g(rng), y = g(rng), z = g(rng);
  return {x, y, z};
}

}  // namespace

UnitQuaternion random_rotation_capped(std::mt19937_64& rng, double max_deg) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec3 axis;
  do axis = gaussian3(rng, g);
  while (axis.norm() < 1e-9);
  const double angle = deg2rad(max_deg) * u(rng);
  return UnitQuaternion::from_axis_angle(axis, angle);
}

Vec3 random_translation_capped(std::mt19937_64& rng, double max_m) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec3 v;
  do {
    const double x = u(rng), y = u(rng), z = u(rng);
    v = Vec3(x, y, z);
  } while (v.squaredNorm() > 1.0);
  return max_m * v;
}

namespace {

struct Rect {
  Vec3 c, u, v;  // center, unit in-plane axes
  double hu, hv;
  double reflectance;
  double area() const { return 4.0 * hu * hv; }
};

struct Cylinder {
  Vec3 base;  // bottom center, axis +z
  double r, h;
  double reflectance;
  double area() const { return 2.0 * kPi * r * h; }
};

struct Sphere {
  Vec3 c;
  double r;
  double reflectance;
  double area() const { return 4.0 * kPi * r * r; }
};

struct Scene {
  std::vector<Rect> rects;
  std::vector<Cylinder> cylinders;
  std::vector<Sphere> spheres;
};

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Scene build_scene(SceneType type, std::mt19937_64& rng) {
  Scene s;
  const double W = uniform(rng, 4.0, 8.0), D = uniform(rng, 4.0, 8.0), H = uniform(rng, 2.4, 3.2);
  const double yaw = uniform(rng, 0.0, 2.0 * kPi);
  const double sensor_h = uniform(rng, 1.0, 1.6);
  const double ox = uniform(rng, -0.3, 0.3) * W, oy = uniform(rng, -0.3, 0.3) * D;
  const Vec3 ex(std::cos(yaw), std::sin(yaw), 0.0), ey(-std::sin(yaw), std::cos(yaw), 0.0), ez = Vec3::UnitZ();
  // Room point (a, b, z) with (a, b) relative to the room center and z above the floor.
  auto room = [&](double a, double b, double z) { return (a - ox) * ex + (b - oy) * ey + (z - sensor_h) * ez; };
  auto refl = [&] { return uniform(rng, 0.2, 0.9); };

  s.rects.push_back({room(0, 0, 0), ex, ey, W / 2, D / 2, refl()});   // floor
  s.rects.push_back({room(0, 0, H), ex, ey, W / 2, D / 2, refl()});   // ceiling
  s.rects.push_back({room(W / 2, 0, H / 2), ey, ez, D / 2, H / 2, refl()});
  s.rects.push_back({room(-W / 2, 0, H / 2), ey, ez, D / 2, H / 2, refl()});
  s.rects.push_back({room(0, D / 2, H / 2), ex, ez, W / 2, H / 2, refl()});
  s.rects.push_back({room(0, -D / 2, H / 2), ex, ez, W / 2, H / 2, refl()});

  // A free spot on the floor, away from the walls and the sensor.
  auto spot = [&](double margin) {
    for (int tries = 0; tries < 100; ++tries) {
      const double a = uniform(rng, -W / 2 + margin, W / 2 - margin);
      const double b = uniform(rng, -D / 2 + margin, D / 2 - margin);
      if (std::hypot(a - ox, b - oy) > margin + 0.6) return std::pair{a, b};
    }
    return std::pair{W / 2 - margin, D / 2 - margin};
  };

  const bool boxes = type == SceneType::boxes || type == SceneType::mixed;
  const bool quadrics = type == SceneType::quadrics || type == SceneType::mixed;
  if (type == SceneType::planes) {
    // free-standing vertical panels
    const int panels = std::uniform_int_distribution<int>(2, 4)(rng);
    for (int p = 0; p < panels; ++p) {
      const auto [a, b] = spot(0.8);
      const double th = uniform(rng, 0.0, kPi);
      const Vec3 u = std::cos(th) * ex + std::sin(th) * ey;
      const double hw = uniform(rng, 0.4, 1.0), hh = uniform(rng, 0.5, 1.0);
      s.rects.push_back({room(a, b, hh), u, ez, hw, hh, refl()});
    }
  }
  if (boxes) {
    const int nbox = std::uniform_int_distribution<int>(2, 5)(rng);
    for (int k = 0; k < nbox; ++k) {
      const double sa = uniform(rng, 0.2, 0.75), sb = uniform(rng, 0.2, 0.75), sh = uniform(rng, 0.2, 0.6);
      const auto [a, b] = spot(std::max(sa, sb) + 0.1);
      const double th = uniform(rng, 0.0, kPi / 2);
      const Vec3 u = std::cos(th) * ex + std::sin(th) * ey, v = ez.cross(u);
      const Vec3 c = room(a, b, sh);
      const double re = refl();
      s.rects.push_back({c + sh * ez, u, v, sa, sb, re});  // top
      s.rects.push_back({c + sa * u, v, ez, sb, sh, re});
      s.rects.push_back({c - sa * u, v, ez, sb, sh, re});
      s.rects.push_back({c + sb * v, u, ez, sa, sh, re});
      s.rects.push_back({c - sb * v, u, ez, sa, sh, re});
    }
  }
  if (quadrics) {
    const int ncyl = std::uniform_int_distribution<int>(1, 3)(rng);
    for (int k = 0; k < ncyl; ++k) {
      const double r = uniform(rng, 0.15, 0.5);
      const auto [a, b] = spot(r + 0.1);
      s.cylinders.push_back({room(a, b, 0), r, H, refl()});
    }
    const int nsph = std::uniform_int_distribution<int>(1, 2)(rng);
    for (int k = 0; k < nsph; ++k) {
      const double r = uniform(rng, 0.3, 0.8);
      const auto [a, b] = spot(r + 0.1);
      s.spheres.push_back({room(a, b, r), r, refl()});
    }
  }
  return s;
}

}  // namespace

ScenePoints sample_scene(SceneType type, std::size_t n, std::mt19937_64& rng) {
  const Scene scene = build_scene(type, rng);
  std::vector<double> areas;
  for (const auto& r : scene.rects) areas.push_back(r.area());
  for (const auto& c : scene.cylinders) areas.push_back(c.area());
  for (const auto& s : scene.spheres) areas.push_back(s.area());
  std::discrete_distribution<std::size_t> pick(areas.begin(), areas.end());
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  std::normal_distribution<double> shade(0.0, 0.03);

  ScenePoints out;
  const std::size_t nr = scene.rects.size(), nc = scene.cylinders.size();
  while (out.points.size() < n) {
    const std::size_t k = pick(rng);
    Vec3 p;
    double refl;
    if (k < nr) {
      const auto& r = scene.rects[k];
      const double a = u(rng), b = u(rng);
      p = r.c + a * r.hu * r.u + b * r.hv * r.v;
      refl = r.reflectance;
    } else if (k < nr + nc) {
      const auto& c = scene.cylinders[k - nr];
      const double th = kPi * u(rng);
      p = c.base + Vec3(c.r * std::cos(th), c.r * std::sin(th), 0.5 * (u(rng) + 1.0) * c.h);
      refl = c.reflectance;
    } else {
      const auto& s = scene.spheres[k - nr - nc];
      Vec3 d;
      do d = gaussian3(rng, g);
      while (d.norm() < 1e-9);
      p = s.c + s.r * d.normalized();
      refl = s.reflectance;
    }
    const double range = p.norm();
    if (range < 0.5 || range > 12.0) continue;
    // returns weaken with range
    out.points.push_back(p);
    out.intensity.push_back(std::clamp(refl / (1.0 + 0.05 * range) + shade(rng), 0.0, 1.0));
  }
  return out;
}

ScanPair synthesize_pair(const SynthSpec& spec, std::mt19937_64& rng, const std::string& id) {
  spec.validate();
  const std::size_t n = static_cast<std::size_t>(spec.n_surfels);
  const std::size_t shared = std::max<std::size_t>(
      std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(spec.overlap * static_cast<double>(n)))), 3);
  const std::size_t pool_n = 2 * n - shared;
  ScenePoints pool = sample_scene(spec.scene, pool_n, rng);

  // Order by azimuth from a random reference so each frame's private part is
  // a contiguous sector.
  const double ref = uniform(rng, -kPi, kPi);
  std::vector<std::size_t> order(pool_n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> az(pool_n);
  for (std::size_t i = 0; i < pool_n; ++i)
    az[i] = std::remainder(std::atan2(pool.points[i].y(), pool.points[i].x()) - ref, 2.0 * kPi);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return az[a] < az[b]; });

  const RigidTransform gt{random_rotation_capped(rng, spec.max_rot_deg),
                          random_translation_capped(rng, spec.max_trans_m)};
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<Vec3> src, tgt;
  std::vector<double> src_i, tgt_i;
  for (std::size_t k = 0; k < n; ++k) {
    src.push_back(pool.points[order[k]]);
    src_i.push_back(pool.intensity[order[k]]);
  }
  for (std::size_t k = n - shared; k < pool_n; ++k) {
    Vec3 y = gt.apply(pool.points[order[k]]);
    if (spec.noise_sigma_m > 0.0)
      y += spec.noise_sigma_m * gaussian3(rng, noise);
    tgt.push_back(y);
    tgt_i.push_back(pool.intensity[order[k]]);
  }

  const VirtualCamera cam = VirtualCamera::lidar_default();
  ScanPair pair;
  pair.id = id;
  pair.gt = gt;
  pair.source = surfels_from_points(src, std::span<const double>(src_i), cam);
  pair.target = surfels_from_points(tgt, std::span<const double>(tgt_i), cam);
  pair.source.frame_id = id + "_src";
  pair.target.frame_id = id + "_tgt";
  return pair;
}

std::vector<ScanPair> synthesize(const SynthSpec& spec) {
  spec.validate();
  std::vector<ScanPair> out;
  out.reserve(static_cast<std::size_t>(spec.n_pairs));
  const int width = static_cast<int>(std::to_string(spec.n_pairs - 1).size());
  for (int k = 0; k < spec.n_pairs; ++k) {
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(k)};
    std::mt19937_64 rng(seq);
    std::string num = std::to_string(k);
    num.insert(0, static_cast<std::size_t>(std::max(0, width - static_cast<int>(num.size()))), '0');
    out.push_back(synthesize_pair(spec, rng, spec.id_prefix + "_" + num));
  }
  return out;
}

}  // namespace surfreg
