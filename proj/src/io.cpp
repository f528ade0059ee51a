#include "surfreg/io.hpp"

#include <algorithm>
#include <bit>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <system_error>

#include "surfreg/icosa.hpp"

namespace surfreg {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "model and PLY binary I/O assume a little-endian host");

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + ": " + std::strerror(errno));
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path);
  return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path + ": " + std::strerror(errno));
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("write failed: " + path);
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename into " + path + ": " + ec.message());
  }
}

namespace {

// Cursor over a byte buffer that reports positions in errors.
class Cursor {
public:
  explicit Cursor(const std::string& s) : s_(s) {}

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ >= s_.size(); }
  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, pos_); }

  // One header line without the terminator; fails at end of input.
  std::string line() {
    if (done()) fail("unexpected end of input");
    const std::size_t nl = s_.find('\n', pos_);
    const std::size_t end = nl == std::string::npos ? s_.size() : nl;
    std::string out = s_.substr(pos_, end - pos_);
    if (!out.empty() && out.back() == '\r') out.pop_back();
    pos_ = nl == std::string::npos ? s_.size() : nl + 1;
    return out;
  }

  void skip_space() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  double number() {
    skip_space();
    if (done()) fail("unexpected end of input, expected a number");
    const char* b = s_.data() + pos_;
    const char* e = s_.data() + s_.size();
    double v = 0.0;
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || (p < e && !std::isspace(static_cast<unsigned char>(*p))))
      fail("malformed number");
    pos_ += static_cast<std::size_t>(p - b);
    return v;
  }

  template <typename T>
  T raw() {
    if (s_.size() - pos_ < sizeof(T)) fail("unexpected end of binary data");
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string bytes(std::size_t n) {
    if (s_.size() - pos_ < n) fail("unexpected end of binary data");
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }

private:
  const std::string& s_;
  std::size_t pos_ = 0;
};

enum class PlyType { i8, u8, i16, u16, i32, u32, f32, f64 };

std::optional<PlyType> ply_type(const std::string& s) {
  if (s == "char" || s == "int8") return PlyType::i8;
  if (s == "uchar" || s == "uint8") return PlyType::u8;
  if (s == "short" || s == "int16") return PlyType::i16;
  if (s == "ushort" || s == "uint16") return PlyType::u16;
  if (s == "int" || s == "int32") return PlyType::i32;
  if (s == "uint" || s == "uint32") return PlyType::u32;
  if (s == "float" || s == "float32") return PlyType::f32;
  if (s == "double" || s == "float64") return PlyType::f64;
  return std::nullopt;
}

double read_binary(Cursor& c, PlyType t) {
  switch (t) {
    case PlyType::i8: return c.raw<std::int8_t>();
    case PlyType::u8: return c.raw<std::uint8_t>();
    case PlyType::i16: return c.raw<std::int16_t>();
    case PlyType::u16: return c.raw<std::uint16_t>();
    case PlyType::i32: return c.raw<std::int32_t>();
    case PlyType::u32: return c.raw<std::uint32_t>();
    case PlyType::f32: return c.raw<float>();
    case PlyType::f64: return c.raw<double>();
  }
  return 0.0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::f64;
  bool is_list = false;
  PlyType count_type = PlyType::u8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

std::vector<std::string> words(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  for (std::string w; ss >> w;) out.push_back(w);
  return out;
}

}  // namespace

PlyCloud parse_ply(const std::string& bytes) {
  Cursor c(bytes);
  if (c.line() != "ply") throw ParseError("not a PLY file (missing 'ply' magic)", 0);
  bool binary = false;
  bool have_format = false;
  std::vector<PlyElement> elements;
  for (;;) {
    const std::size_t at = c.pos();
    const auto w = words(c.line());
    if (w.empty()) continue;
    if (w[0] == "end_header") break;
    if (w[0] == "comment" || w[0] == "obj_info") continue;
    if (w[0] == "format") {
      if (w.size() != 3 || w[2] != "1.0") throw ParseError("bad format line", at);
      if (w[1] == "ascii") binary = false;
      else if (w[1] == "binary_little_endian") binary = true;
      else throw ParseError("unsupported PLY format '" + w[1] + "'", at);
      have_format = true;
    } else if (w[0] == "element") {
      if (w.size() != 3) throw ParseError("bad element line", at);
      PlyElement e;
      e.name = w[1];
      const auto [p, ec] = std::from_chars(w[2].data(), w[2].data() + w[2].size(), e.count);
      if (ec != std::errc() || p != w[2].data() + w[2].size()) throw ParseError("bad element count", at);
      elements.push_back(std::move(e));
    } else if (w[0] == "property") {
      if (elements.empty()) throw ParseError("property before any element", at);
      PlyProperty p;
      if (w.size() == 5 && w[1] == "list") {
        const auto ct = ply_type(w[2]);
        const auto it = ply_type(w[3]);
        if (!ct || !it) throw ParseError("unknown property type", at);
        p.is_list = true;
        p.count_type = *ct;
        p.type = *it;
        p.name = w[4];
      } else if (w.size() == 3) {
        const auto t = ply_type(w[1]);
        if (!t) throw ParseError("unknown property type '" + w[1] + "'", at);
        p.type = *t;
        p.name = w[2];
      } else {
        throw ParseError("bad property line", at);
      }
      elements.back().props.push_back(p);
    } else {
      throw ParseError("unexpected header keyword '" + w[0] + "'", at);
    }
  }
  if (!have_format) throw ParseError("PLY header has no format line", c.pos());

  PlyCloud out;
  bool seen_vertex = false;
  for (const auto& e : elements) {
    const bool is_vertex = e.name == "vertex";
    std::vector<int> slot(e.props.size(), -1);
    static const char* kNames[] = {"x", "y", "z", "nx", "ny", "nz", "radius", "intensity"};
    bool present[8] = {};
    if (is_vertex) {
      if (seen_vertex) throw ParseError("duplicate vertex element", c.pos());
      seen_vertex = true;
      for (std::size_t i = 0; i < e.props.size(); ++i)
        for (int k = 0; k < 8; ++k)
          if (e.props[i].name == kNames[k] && !e.props[i].is_list) {
            slot[i] = k;
            present[k] = true;
          }
      if (!present[0] || !present[1] || !present[2]) throw ParseError("vertex element lacks x, y, z", c.pos());
      out.points.resize(e.count);
      if (present[3] && present[4] && present[5]) out.normals.emplace(e.count, Vec3::Zero());
      if (present[6]) out.radius.emplace(e.count, 0.0);
      if (present[7]) out.intensity.emplace(e.count, 0.0);
    }
    for (std::size_t r = 0; r < e.count; ++r) {
      for (std::size_t i = 0; i < e.props.size(); ++i) {
        const auto& p = e.props[i];
        if (p.is_list) {
          const double n = binary ? read_binary(c, p.count_type) : c.number();
          if (n < 0 || n != std::floor(n)) c.fail("bad list length");
          for (long j = 0; j < static_cast<long>(n); ++j) binary ? read_binary(c, p.type) : c.number();
          continue;
        }
        const double v = binary ? read_binary(c, p.type) : c.number();
        if (!is_vertex || slot[i] < 0) continue;
        const int k = slot[i];
        if (k < 3) out.points[r][k] = v;
        else if (k < 6) { if (out.normals) (*out.normals)[r][k - 3] = v; }
        else if (k == 6) (*out.radius)[r] = v;
        else (*out.intensity)[r] = v;
      }
    }
  }
  if (!seen_vertex) throw ParseError("PLY has no vertex element", c.pos());
  if (!binary) {
    c.skip_space();
    if (!c.done()) c.fail("trailing data after last element");
  } else if (!c.done()) {
    c.fail("trailing data after last element");
  }
  return out;
}

PlyCloud read_ply(const std::string& path) {
  const std::string bytes = read_file(path);
  try {
    return parse_ply(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.detail(), e.offset());
  }
}

std::string format_surfel_ply(const SurfelCloud& cloud) {
  std::string s;
  s += "ply\nformat ascii 1.0\n";
  if (!cloud.frame_id.empty()) s += "comment frame " + cloud.frame_id + "\n";
  s += "element vertex " + std::to_string(cloud.size()) + "\n";
  for (const char* n : {"x", "y", "z", "nx", "ny", "nz", "radius", "intensity"})
    s += std::string("property double ") + n + "\n";
  s += "end_header\n";
  char buf[512];
  for (const auto& f : cloud.surfels) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", f.position.x(),
                  f.position.y(), f.position.z(), f.normal.x(), f.normal.y(), f.normal.z(), f.radius,
                  f.intensity);
    s += buf;
  }
  return s;
}

void write_surfel_ply(const std::string& path, const SurfelCloud& cloud) {
  write_file_atomic(path, format_surfel_ply(cloud));
}

SurfelCloud read_surfel_ply(const std::string& path) {
  const PlyCloud p = read_ply(path);
  if (!p.is_surfel() || !p.intensity)
    throw ParseError(path + ": not a surfel PLY (needs x y z nx ny nz radius intensity)", 0);
  SurfelCloud c;
  c.frame_id = fs::path(path).stem().string();
  c.surfels.resize(p.points.size());
  for (std::size_t i = 0; i < p.points.size(); ++i)
    c.surfels[i] = {p.points[i], (*p.normals)[i], (*p.radius)[i], (*p.intensity)[i]};
  return c;
}

// ---------------------------------------------------------------------------

DepthImage parse_pgm_depth(const std::string& bytes, double depth_scale) {
  if (!(depth_scale > 0.0)) throw ParseError("depth_scale must be > 0", 0);
  Cursor c(bytes);
  if (bytes.size() < 2 || bytes.compare(0, 2, "P5") != 0) throw ParseError("not a binary PGM (P5)", 0);
  c.bytes(2);
  // Header tokens may be separated by whitespace and '#' comments.
  auto token = [&]() -> long {
    for (;;) {
      c.skip_space();
      if (!c.done() && bytes[c.pos()] == '#') {
        c.line();
        continue;
      }
      break;
    }
    const std::size_t at = c.pos();
    const double v = c.number();
    if (v < 1 || v != std::floor(v)) throw ParseError("bad PGM header value", at);
    return static_cast<long>(v);
  };
  const long w = token();
  const long h = token();
  const long maxval = token();
  if (maxval > 65535) throw ParseError("PGM maxval above 65535", c.pos());
  if (c.done() || !std::isspace(static_cast<unsigned char>(bytes[c.pos()])))
    c.fail("missing whitespace after PGM header");
  c.bytes(1);
  DepthImage img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.depth_m.resize(static_cast<std::size_t>(w * h));
  const bool wide = maxval > 255;
  for (auto& d : img.depth_m) {
    unsigned v;
    if (wide) {
      const auto hi = c.raw<std::uint8_t>();
      const auto lo = c.raw<std::uint8_t>();
      v = (static_cast<unsigned>(hi) << 8) | lo;
    } else {
      v = c.raw<std::uint8_t>();
    }
    d = v * depth_scale;
  }
  return img;
}

DepthMeta parse_depth_meta(const std::string& text, int width, int height) {
  const KeyValues kv = parse_key_values(text);
  for (const char* k : {"fx", "fy", "cx", "cy"})
    if (!kv.count(k)) throw ParseError(std::string("depth sidecar lacks '") + k + "'", 0);
  DepthMeta m;
  m.camera.width = width;
  m.camera.height = height;
  m.camera.fx = kv_double(kv, "fx", 0);
  m.camera.fy = kv_double(kv, "fy", 0);
  m.camera.cx = kv_double(kv, "cx", 0);
  m.camera.cy = kv_double(kv, "cy", 0);
  m.camera.rho_min = kv_double(kv, "rho_min", m.camera.rho_min);
  m.camera.rho_max = kv_double(kv, "rho_max", m.camera.rho_max);
  m.camera.C = kv_double(kv, "C", m.camera.C);
  m.depth_scale = kv_double(kv, "depth_scale", m.depth_scale);
  return m;
}

void write_pgm_depth(const std::string& path, const DepthImage& img, double depth_scale) {
  std::string s = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n65535\n";
  for (double d : img.depth_m) {
    const long v = std::lround(d / depth_scale);
    if (v < 0 || v > 65535) throw std::invalid_argument("depth out of 16-bit range at this scale");
    s += static_cast<char>((v >> 8) & 0xff);
    s += static_cast<char>(v & 0xff);
  }
  write_file_atomic(path, s);
}

// ---------------------------------------------------------------------------

RigidTransform parse_transform(const std::string& text) {
  Cursor c(text);
  Mat3 r;
  Vec3 t;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) r(i, j) = c.number();
    t[i] = c.number();
  }
  const std::size_t at = c.pos();
  if (!is_rotation(r, 1e-6)) throw ParseError("transform rotation block is not a rotation", at);
  c.skip_space();
  if (!c.done()) {
    const std::size_t qat = c.pos();
    if (text[qat] != 'q') c.fail("unexpected data after 3x4 transform");
    c.line();
    c.skip_space();
    if (!c.done()) throw ParseError("unexpected data after quaternion line", qat);
  }
  return RigidTransform::from_matrix(r, t);
}

RigidTransform read_transform(const std::string& path) {
  const std::string text = read_file(path);
  try {
    return parse_transform(text);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.detail(), e.offset());
  }
}

std::string format_transform(const RigidTransform& t, bool with_quaternion) {
  const Mat3 r = t.rotation_matrix();
  std::string s;
  char buf[256];
  for (int i = 0; i < 3; ++i) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g\n", r(i, 0), r(i, 1), r(i, 2), t.translation[i]);
    s += buf;
  }
  if (with_quaternion) {
    const auto& q = t.rotation;
    std::snprintf(buf, sizeof buf, "q %.17g %.17g %.17g %.17g\n", q.w(), q.x(), q.y(), q.z());
    s += buf;
  }
  return s;
}

void write_transform(const std::string& path, const RigidTransform& t, bool with_quaternion) {
  write_file_atomic(path, format_transform(t, with_quaternion));
}

// ---------------------------------------------------------------------------

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::size_t pos = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::size_t end = nl == std::string::npos ? text.size() : nl;
    std::string line = text.substr(pos, end - pos);
    const std::size_t at = pos;
    pos = end + 1;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", at);
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError("empty key", at);
    if (kv.count(key)) throw ParseError("duplicate key '" + key + "'", at);
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues read_key_values(const std::string& path) {
  const std::string text = read_file(path);
  try {
    return parse_key_values(text);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.detail(), e.offset());
  }
}

double kv_double(const KeyValues& kv, const std::string& key, double fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const std::string& s = it->second;
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v))
    throw ParseError("key '" + key + "': not a number: '" + s + "'", 0);
  return v;
}

long kv_long(const KeyValues& kv, const std::string& key, long fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const std::string& s = it->second;
  long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ParseError("key '" + key + "': not an integer: '" + s + "'", 0);
  return v;
}

bool kv_bool(const KeyValues& kv, const std::string& key, bool fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const std::string& s = it->second;
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw ParseError("key '" + key + "': not a boolean: '" + s + "'", 0);
}

std::string kv_string(const KeyValues& kv, const std::string& key, const std::string& fallback) {
  const auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

SynthSpec synth_spec_from(const KeyValues& kv) {
  static const char* kKnown[] = {"n_pairs", "n_surfels", "scene", "max_rot_deg", "max_trans_m",
                                 "noise_sigma_m", "overlap", "seed", "id_prefix"};
  for (const auto& [k, v] : kv)
    if (std::find_if(std::begin(kKnown), std::end(kKnown), [&](const char* n) { return k == n; }) ==
        std::end(kKnown))
      throw ParseError("unknown synth key '" + k + "'", 0);
  SynthSpec s;
  s.n_pairs = static_cast<int>(kv_long(kv, "n_pairs", s.n_pairs));
  s.n_surfels = static_cast<int>(kv_long(kv, "n_surfels", s.n_surfels));
  try {
    s.scene = scene_type_from_string(kv_string(kv, "scene", to_string(s.scene)));
  } catch (const std::invalid_argument& e) {
    throw ParseError(e.what(), 0);
  }
  s.max_rot_deg = kv_double(kv, "max_rot_deg", s.max_rot_deg);
  s.max_trans_m = kv_double(kv, "max_trans_m", s.max_trans_m);
  s.noise_sigma_m = kv_double(kv, "noise_sigma_m", s.noise_sigma_m);
  s.overlap = kv_double(kv, "overlap", s.overlap);
  s.seed = static_cast<std::uint64_t>(kv_long(kv, "seed", static_cast<long>(s.seed)));
  s.id_prefix = kv_string(kv, "id_prefix", s.id_prefix);
  return s;
}

namespace {

void reject_unknown(const KeyValues& kv, std::initializer_list<const char*> known, const char* what) {
  for (const auto& [k, v] : kv)
    if (std::find_if(known.begin(), known.end(), [&](const char* n) { return k == n; }) == known.end())
      throw ParseError(std::string("unknown ") + what + " key '" + k + "'", 0);
}

std::string fmt_exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

RunConfig run_config_from(const KeyValues& kv) {
  reject_unknown(kv,
                 {"channels", "layers", "k_enc", "radius_weighting", "use_normals", "d_model", "hidden1",
                  "hidden2", "fusion", "query_residual", "model_seed", "delta", "lr", "steps", "batch", "seed",
                  "loss", "correspondences", "eval_interval", "val_fraction", "augment", "aug_max_rot_deg",
                  "aug_max_trans_m"},
                 "training config");
  RunConfig c;
  auto& m = c.model;
  auto& t = c.train;
  m.encoder.channels = static_cast<int>(kv_long(kv, "channels", m.encoder.channels));
  m.encoder.layers = static_cast<int>(kv_long(kv, "layers", m.encoder.layers));
  m.encoder.k_enc = static_cast<int>(kv_long(kv, "k_enc", m.encoder.k_enc));
  m.encoder.radius_weighting = kv_bool(kv, "radius_weighting", m.encoder.radius_weighting);
  m.encoder.use_normals = kv_bool(kv, "use_normals", m.encoder.use_normals);
  m.d_model = static_cast<int>(kv_long(kv, "d_model", m.d_model));
  m.hidden1 = static_cast<int>(kv_long(kv, "hidden1", m.hidden1));
  m.hidden2 = static_cast<int>(kv_long(kv, "hidden2", m.hidden2));
  const std::string fusion = kv_string(kv, "fusion", "attention");
  if (fusion == "attention") m.fusion = Fusion::attention;
  else if (fusion == "mean") m.fusion = Fusion::mean;
  else throw ParseError("key 'fusion': expected attention or mean, got '" + fusion + "'", 0);
  m.query_residual = kv_bool(kv, "query_residual", m.query_residual);
  m.seed = static_cast<std::uint64_t>(kv_long(kv, "model_seed", static_cast<long>(m.seed)));

  t.delta = kv_double(kv, "delta", t.delta);
  t.lr = kv_double(kv, "lr", t.lr);
  t.steps = static_cast<int>(kv_long(kv, "steps", t.steps));
  t.batch = static_cast<int>(kv_long(kv, "batch", t.batch));
  t.seed = static_cast<std::uint64_t>(kv_long(kv, "seed", static_cast<long>(t.seed)));
  const std::string loss = kv_string(kv, "loss", to_string(t.loss));
  if (loss == "huber") t.loss = LossKind::huber;
  else if (loss == "l1") t.loss = LossKind::l1;
  else if (loss == "l2") t.loss = LossKind::l2;
  else throw ParseError("key 'loss': expected huber, l1 or l2, got '" + loss + "'", 0);
  const std::string corr = kv_string(kv, "correspondences",
                                     t.correspondences == CorrespondenceMode::predicted ? "predicted" : "ground_truth");
  if (corr == "predicted") t.correspondences = CorrespondenceMode::predicted;
  else if (corr == "ground_truth") t.correspondences = CorrespondenceMode::ground_truth;
  else throw ParseError("key 'correspondences': expected predicted or ground_truth, got '" + corr + "'", 0);
  t.eval_interval = static_cast<int>(kv_long(kv, "eval_interval", t.eval_interval));
  t.val_fraction = kv_double(kv, "val_fraction", t.val_fraction);
  t.augment = kv_bool(kv, "augment", t.augment);
  t.aug_max_rot_deg = kv_double(kv, "aug_max_rot_deg", t.aug_max_rot_deg);
  t.aug_max_trans_m = kv_double(kv, "aug_max_trans_m", t.aug_max_trans_m);
  try {
    m.validate();
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("training config: ") + e.what(), 0);
  }
  return c;
}

KeyValues to_key_values(const RunConfig& c) {
  const auto& m = c.model;
  const auto& t = c.train;
  return {
      {"channels", std::to_string(m.encoder.channels)},
      {"layers", std::to_string(m.encoder.layers)},
      {"k_enc", std::to_string(m.encoder.k_enc)},
      {"radius_weighting", m.encoder.radius_weighting ? "true" : "false"},
      {"use_normals", m.encoder.use_normals ? "true" : "false"},
      {"d_model", std::to_string(m.d_model)},
      {"hidden1", std::to_string(m.hidden1)},
      {"hidden2", std::to_string(m.hidden2)},
      {"fusion", m.fusion == Fusion::mean ? "mean" : "attention"},
      {"query_residual", m.query_residual ? "true" : "false"},
      {"model_seed", std::to_string(m.seed)},
      {"delta", fmt_exact(t.delta)},
      {"lr", fmt_exact(t.lr)},
      {"steps", std::to_string(t.steps)},
      {"batch", std::to_string(t.batch)},
      {"seed", std::to_string(t.seed)},
      {"loss", to_string(t.loss)},
      {"correspondences", t.correspondences == CorrespondenceMode::predicted ? "predicted" : "ground_truth"},
      {"eval_interval", std::to_string(t.eval_interval)},
      {"val_fraction", fmt_exact(t.val_fraction)},
      {"augment", t.augment ? "true" : "false"},
      {"aug_max_rot_deg", fmt_exact(t.aug_max_rot_deg)},
      {"aug_max_trans_m", fmt_exact(t.aug_max_trans_m)},
  };
}

// ---------------------------------------------------------------------------

void write_pair(const std::string& dir, const ScanPair& pair) {
  const fs::path d(dir);
  write_surfel_ply((d / (pair.id + "_src.ply")).string(), pair.source);
  write_surfel_ply((d / (pair.id + "_tgt.ply")).string(), pair.target);
  if (pair.gt) write_transform((d / (pair.id + "_gt.txt")).string(), *pair.gt);
}

std::vector<ScanPair> read_dataset(const std::string& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a directory: " + dir);
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    const std::string suffix = "_src.ply";
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
      ids.push_back(name.substr(0, name.size() - suffix.size()));
  }
  // Directory iteration order is unspecified.
  std::sort(ids.begin(), ids.end());
  std::vector<ScanPair> out;
  const fs::path d(dir);
  for (const auto& id : ids) {
    ScanPair p;
    p.id = id;
    p.source = read_surfel_ply((d / (id + "_src.ply")).string());
    p.target = read_surfel_ply((d / (id + "_tgt.ply")).string());
    const fs::path gt = d / (id + "_gt.txt");
    if (fs::exists(gt)) p.gt = read_transform(gt.string());
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'U', 'R', 'F', 'R', 'E', 'G', '\0'};

std::uint64_t fnv1a(const char* p, std::size_t n) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(p[i]);
    h *= 1099511628211ull;
  }
  return h;
}

template <typename T>
void put(std::string& s, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  s.append(b, sizeof(T));
}

std::string format_kv(const KeyValues& kv) {
  std::string s;
  for (const auto& [k, v] : kv) {
    if (k.find_first_of("=\n#") != std::string::npos || v.find_first_of("\n#") != std::string::npos)
      throw std::invalid_argument("metadata entry '" + k + "' cannot be stored as key=value text");
    s += k + "=" + v + "\n";
  }
  return s;
}

}  // namespace

std::string serialize_model(const RegistrationModel<double>& model, const KeyValues& meta) {
  const auto& g = IcosaGroup::instance();
  const ModelConfig& c = model.config();
  std::string s(kMagic, sizeof kMagic);
  put<std::uint32_t>(s, kModelVersion);
  put<std::uint64_t>(s, g.cayley_checksum());
  put<std::uint64_t>(s, g.anchor_ordering_hash());
  put<std::int32_t>(s, c.encoder.channels);
  put<std::int32_t>(s, c.encoder.layers);
  put<std::int32_t>(s, c.encoder.k_enc);
  put<std::uint8_t>(s, c.encoder.radius_weighting);
  put<std::uint8_t>(s, c.encoder.use_normals);
  put<std::int32_t>(s, c.d_model);
  put<std::int32_t>(s, c.hidden1);
  put<std::int32_t>(s, c.hidden2);
  put<std::uint8_t>(s, c.fusion == Fusion::mean ? 1 : 0);
  put<std::uint8_t>(s, c.query_residual);
  put<std::uint64_t>(s, c.seed);
  const std::string m = format_kv(meta);
  put<std::uint32_t>(s, static_cast<std::uint32_t>(m.size()));
  s += m;
  const auto& entries = model.params().entries();
  put<std::uint32_t>(s, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put<std::uint32_t>(s, static_cast<std::uint32_t>(e.name.size()));
    s += e.name;
    put<std::uint32_t>(s, static_cast<std::uint32_t>(e.value.shape().size()));
    for (std::size_t d : e.value.shape()) put<std::uint64_t>(s, d);
    for (double v : e.value.data()) put<double>(s, v);
  }
  put<std::uint64_t>(s, fnv1a(s.data(), s.size()));
  return s;
}

ModelFile deserialize_model(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw ParseError("not a model file (bad magic)", 0);
  Cursor c(bytes);
  c.bytes(sizeof kMagic);
  const auto version = c.raw<std::uint32_t>();
  if (version != kModelVersion)
    throw ParseError("unsupported model file version " + std::to_string(version), sizeof kMagic);
  // Group tables first: a mismatch means the file was produced against a
  // different anchor or element ordering and the weights are meaningless.
  const auto& g = IcosaGroup::instance();
  const auto cayley = c.raw<std::uint64_t>();
  const auto anchors = c.raw<std::uint64_t>();
  if (cayley != g.cayley_checksum()) throw InvariantError("model file: Cayley-table checksum mismatch");
  if (anchors != g.anchor_ordering_hash()) throw InvariantError("model file: anchor ordering hash mismatch");

  const std::size_t body_end = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body_end, sizeof stored);
  if (stored != fnv1a(bytes.data(), body_end)) throw ParseError("model file is corrupt (checksum)", body_end);

  ModelConfig cfg;
  cfg.encoder.channels = c.raw<std::int32_t>();
  cfg.encoder.layers = c.raw<std::int32_t>();
  cfg.encoder.k_enc = c.raw<std::int32_t>();
  cfg.encoder.radius_weighting = c.raw<std::uint8_t>() != 0;
  cfg.encoder.use_normals = c.raw<std::uint8_t>() != 0;
  cfg.d_model = c.raw<std::int32_t>();
  cfg.hidden1 = c.raw<std::int32_t>();
  cfg.hidden2 = c.raw<std::int32_t>();
  cfg.fusion = c.raw<std::uint8_t>() ? Fusion::mean : Fusion::attention;
  cfg.query_residual = c.raw<std::uint8_t>() != 0;
  cfg.seed = c.raw<std::uint64_t>();
  const std::size_t cfg_at = c.pos();
  ModelFile out;
  try {
    out.model = std::make_unique<RegistrationModel<double>>(cfg);
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("model file: bad config: ") + e.what(), cfg_at);
  }
  const auto meta_len = c.raw<std::uint32_t>();
  const std::size_t meta_at = c.pos();
  try {
    out.meta = parse_key_values(c.bytes(meta_len));
  } catch (const ParseError& e) {
    throw ParseError("model file metadata: " + e.detail(), meta_at + e.offset());
  }

  const auto count = c.raw<std::uint32_t>();
  auto tensors = out.model->params().tensors();
  const auto& entries = out.model->params().entries();
  if (count != entries.size()) throw ParseError("model file: parameter count mismatch", c.pos());
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = c.pos();
    const std::string name = c.bytes(c.raw<std::uint32_t>());
    const auto rank = c.raw<std::uint32_t>();
    ad::Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(c.raw<std::uint64_t>());
    if (name != entries[i].name || shape != entries[i].value.shape())
      throw ParseError("model file: parameter '" + name + "' does not match the architecture", at);
    auto dst = tensors[i].mutable_data();
    for (auto& v : dst) {
      v = c.raw<double>();
      if (!std::isfinite(v)) throw ParseError("model file: non-finite weight in '" + name + "'", c.pos() - 8);
    }
  }
  if (c.pos() != body_end) throw ParseError("model file: trailing data", c.pos());
  return out;
}

void save_model(const std::string& path, const RegistrationModel<double>& model, const KeyValues& meta) {
  write_file_atomic(path, serialize_model(model, meta));
}

ModelFile load_model(const std::string& path) {
  const std::string bytes = read_file(path);
  try {
    return deserialize_model(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.detail(), e.offset());
  }
}

}  // namespace surfreg
