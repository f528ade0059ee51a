#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "surfreg/geom.hpp"
#include "surfreg/surfel.hpp"

namespace surfreg {

struct ScanPair {
  SurfelCloud source;
  SurfelCloud target;
  std::optional<RigidTransform> gt;  // maps source coordinates into the target frame
  std::string id;
};

enum class SceneType { planes, boxes, quadrics, mixed };

std::string to_string(SceneType t);
SceneType scene_type_from_string(const std::string& s);

struct SynthSpec {
  int n_pairs = 200;
  int n_surfels = 512;
  SceneType scene = SceneType::mixed;
  double max_rot_deg = 30.0;
  double max_trans_m = 2.0;
  double noise_sigma_m = 0.01;
  double overlap = 1.0;
  std::uint64_t seed = 7;
  std::string id_prefix = "pair";

  void validate() const;
};

/// Random rotation with angle <= max_deg: axis uniform on the sphere, angle
/// uniform in [0, max_deg].
UnitQuaternion random_rotation_capped(std::mt19937_64& rng, double max_deg);

/// Random translation uniform in the ball of radius max_m.
Vec3 random_translation_capped(std::mt19937_64& rng, double max_m);

/// Sensor-frame sample of a synthetic indoor scene: points with per-point
/// intensity. The sensor sits at the origin, z up.
struct ScenePoints {
  std::vector<Vec3> points;
  std::vector<double> intensity;
};

ScenePoints sample_scene(SceneType type, std::size_t n, std::mt19937_64& rng);

/// One pair: scene points in the source frame, target = gt * source + noise,
/// cropped to the requested overlap. Surfels are initialized per frame with
/// the default virtual camera.
ScanPair synthesize_pair(const SynthSpec& spec, std::mt19937_64& rng, const std::string& id);

/// n_pairs pairs, reproducible per seed. Pair k draws from its own stream
/// (seed, k), so a pair does not depend on how many pairs precede it.
std::vector<ScanPair> synthesize(const SynthSpec& spec);

}  // namespace surfreg
