#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "surfreg/dataset.hpp"
#include "surfreg/geom.hpp"
#include "surfreg/model.hpp"
#include "surfreg/surfel.hpp"
#include "surfreg/train.hpp"

namespace surfreg {

/// Malformed input. `offset` is the byte position where parsing failed.
class ParseError : public std::runtime_error {
public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), detail_(what), offset_(offset) {}
  std::size_t offset() const { return offset_; }
  const std::string& detail() const { return detail_; }

private:
  std::string detail_;
  std::size_t offset_;
};

/// File cannot be opened, read or written.
class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Stored data contradicts a checked invariant (e.g. group checksum).
class InvariantError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path);

/// Writes through a temporary file and a rename, so a failed write leaves
/// no partial output.
void write_file_atomic(const std::string& path, const std::string& content);

// ---------------------------------------------------------------------------
// PLY

/// Vertex data of a PLY file. Unknown properties are ignored.
struct PlyCloud {
  std::vector<Vec3> points;
  std::optional<std::vector<Vec3>> normals;      // nx, ny, nz
  std::optional<std::vector<double>> radius;     // radius
  std::optional<std::vector<double>> intensity;  // intensity
  bool is_surfel() const { return normals && radius; }
};

/// ASCII and binary_little_endian PLY with scalar vertex properties.
PlyCloud parse_ply(const std::string& bytes);
PlyCloud read_ply(const std::string& path);

/// Surfel PLY: x y z nx ny nz radius intensity as ASCII doubles with 17
/// significant digits, so the round trip is exact.
std::string format_surfel_ply(const SurfelCloud& cloud);
void write_surfel_ply(const std::string& path, const SurfelCloud& cloud);

/// Reads a surfel PLY (all eight properties required).
SurfelCloud read_surfel_ply(const std::string& path);

// ---------------------------------------------------------------------------
// Depth images: 16-bit binary PGM (P5, maxval <= 65535, big-endian) with a
// key=value sidecar giving fx, fy, cx, cy, depth_scale (meters per unit) and
// optionally rho_min, rho_max, C.

struct DepthMeta {
  VirtualCamera camera;
  double depth_scale = 0.001;
};

DepthImage parse_pgm_depth(const std::string& bytes, double depth_scale);
DepthMeta parse_depth_meta(const std::string& text, int width, int height);
void write_pgm_depth(const std::string& path, const DepthImage& img, double depth_scale);

// ---------------------------------------------------------------------------
// Ground truth: 3 rows x 4 numbers, row-major [R | t], meters. An optional
// fourth line "q w x y z" is accepted and ignored on read.

RigidTransform parse_transform(const std::string& text);
RigidTransform read_transform(const std::string& path);
std::string format_transform(const RigidTransform& t, bool with_quaternion = false);
void write_transform(const std::string& path, const RigidTransform& t, bool with_quaternion = false);

// ---------------------------------------------------------------------------
// key = value text files; '#' starts a comment.

using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::string& path);

/// Typed lookups; ParseError names the key on bad values.
double kv_double(const KeyValues& kv, const std::string& key, double fallback);
long kv_long(const KeyValues& kv, const std::string& key, long fallback);
bool kv_bool(const KeyValues& kv, const std::string& key, bool fallback);
std::string kv_string(const KeyValues& kv, const std::string& key, const std::string& fallback);

SynthSpec synth_spec_from(const KeyValues& kv);

/// Model and training settings of one run. Keys: channels, layers, k_enc,
/// radius_weighting, use_normals, d_model, hidden1, hidden2, fusion
/// (attention | mean), query_residual, model_seed, delta, lr, steps, batch,
/// seed, loss (huber | l1 | l2), correspondences (predicted | ground_truth),
/// eval_interval, val_fraction, augment, aug_max_rot_deg, aug_max_trans_m.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

RunConfig run_config_from(const KeyValues& kv);
KeyValues to_key_values(const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Dataset directories: <id>_src.ply, <id>_tgt.ply, optional <id>_gt.txt.

void write_pair(const std::string& dir, const ScanPair& pair);
std::vector<ScanPair> read_dataset(const std::string& dir);

// ---------------------------------------------------------------------------
// Model file (little-endian):
//   "SURFREG\0" | u32 version | u64 cayley checksum | u64 anchor hash |
//   config block | u32 meta length + key=value text |
//   u32 tensor count, each: u32 name length, name, u32 rank, u64 dims, f64 data |
//   u64 FNV-1a of all preceding bytes

inline constexpr std::uint32_t kModelVersion = 1;

struct ModelFile {
  std::unique_ptr<RegistrationModel<double>> model;
  KeyValues meta;  // training metadata
};

std::string serialize_model(const RegistrationModel<double>& model, const KeyValues& meta = {});
ModelFile deserialize_model(const std::string& bytes);
void save_model(const std::string& path, const RegistrationModel<double>& model, const KeyValues& meta = {});
ModelFile load_model(const std::string& path);

}  // namespace surfreg
