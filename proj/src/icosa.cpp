#include "surfreg/icosa.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace surfreg {

namespace {

constexpr double kMatchTol = 1e-9;

double max_abs_diff(const Mat3& a, const Mat3& b) { return (a - b).cwiseAbs().maxCoeff(); }

Mat3 axis_angle_matrix(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

// Canonical axis sign for half-turns: first significant component positive.
Vec3 canonical_sign(Vec3 v) {
  for (int i = 0; i < 3; ++i) {
    if (std::abs(v[i]) > 1e-9) {
      if (v[i] < 0) v = -v;
      break;
    }
  }
  return v;
}

void angle_axis_of(const Mat3& r, double& angle, Vec3& axis) {
  const Vec3 raw(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double s = raw.norm() / 2.0;
  const double c = (r.trace() - 1.0) / 2.0;
  angle = std::atan2(s, c);
  if (s > 1e-9) {
    axis = raw.normalized();
  } else if (c > 0) {
    axis = Vec3::Zero();
    angle = 0.0;
  } else {
    // half-turn: R + I = 2 u u^T
    const Mat3 m = r + Mat3::Identity();
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (m.col(i).norm() > m.col(best).norm()) best = i;
    axis = canonical_sign(m.col(best).normalized());
  }
}

int find_element(const std::vector<Mat3>& elems, const Mat3& m) {
  for (std::size_t i = 0; i < elems.size(); ++i)
    if (max_abs_diff(elems[i], m) < kMatchTol) return static_cast<int>(i);
  return -1;
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

AnchorIndex::AnchorIndex(int v) : a(v) {
  if (v < 0 || v >= kNumAnchors) throw std::out_of_range("anchor index out of range");
}

RotationOrder::RotationOrder(int v) : r(v) {
  if (v < 0 || v >= kNumRotations) throw std::out_of_range("rotation order out of range");
}

IcosaGroup IcosaGroup::build() {
  IcosaGroup g;
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  // Fixed vertex ordering: (0,±1,±φ), (±1,±φ,0), (±φ,0,±1).
  const std::array<Vec3, kNumAnchors> raw = {
      Vec3(0, 1, phi),  Vec3(0, 1, -phi),  Vec3(0, -1, phi),  Vec3(0, -1, -phi),
      Vec3(1, phi, 0),  Vec3(1, -phi, 0),  Vec3(-1, phi, 0),  Vec3(-1, -phi, 0),
      Vec3(phi, 0, 1),  Vec3(phi, 0, -1),  Vec3(-phi, 0, 1),  Vec3(-phi, 0, -1)};
  for (int a = 0; a < kNumAnchors; ++a) g.vertices_[a] = raw[a].normalized();

  // Generators: 5-fold turn about v0, half-turn about the midpoint of edge v0-v2.
  const Mat3 five = axis_angle_matrix(g.vertices_[0], 2.0 * kPi / 5.0);
  const Mat3 two = axis_angle_matrix((g.vertices_[0] + g.vertices_[2]).normalized(), kPi);

  std::vector<Mat3> elems{Mat3::Identity()};
  std::deque<Mat3> frontier{Mat3::Identity()};
  while (!frontier.empty()) {
    const Mat3 cur = frontier.front();
    frontier.pop_front();
    for (const Mat3& gen : {five, two}) {
      const Mat3 next = gen * cur;
      if (find_element(elems, next) < 0) {
        elems.push_back(next);
        frontier.push_back(next);
      }
      if (elems.size() > kNumRotations) break;
    }
    if (elems.size() > kNumRotations) break;
  }
  if (elems.size() != kNumRotations)
    throw std::logic_error("icosahedral group closure produced " + std::to_string(elems.size()) +
                           " elements");

  struct Keyed {
    Mat3 m;
    double angle;
    Vec3 axis;
  };
  std::vector<Keyed> keyed;
  for (const Mat3& m : elems) {
    Keyed k{m, 0.0, Vec3::Zero()};
    angle_axis_of(m, k.angle, k.axis);
    keyed.push_back(k);
  }
  std::sort(keyed.begin(), keyed.end(), [](const Keyed& l, const Keyed& r) {
    if (std::abs(l.angle - r.angle) > 1e-6) return l.angle < r.angle;
    for (int i = 0; i < 3; ++i)
      if (std::abs(l.axis[i] - r.axis[i]) > 1e-9) return l.axis[i] < r.axis[i];
    return false;
  });
  for (const Keyed& k : keyed) {
    g.elements_.push_back(k.m);
    g.angles_.push_back(k.angle);
    g.axes_.push_back(k.axis);
  }

  g.perms_.resize(kNumRotations);
  g.inv_perms_.resize(kNumRotations);
  for (int r = 0; r < kNumRotations; ++r) {
    for (int a = 0; a < kNumAnchors; ++a) {
      const Vec3 moved = g.elements_[r] * g.vertices_[a];
      int match = -1;
      for (int b = 0; b < kNumAnchors; ++b)
        if ((moved - g.vertices_[b]).cwiseAbs().maxCoeff() < kMatchTol) match = b;
      if (match < 0) throw std::logic_error("group element does not preserve the vertex set");
      g.perms_[r][a] = match;
      g.inv_perms_[r][match] = a;
    }
  }

  g.cayley_.assign(kNumRotations * kNumRotations, -1);
  g.inverse_.assign(kNumRotations, -1);
  for (int i = 0; i < kNumRotations; ++i) {
    for (int j = 0; j < kNumRotations; ++j) {
      const int k = find_element(g.elements_, g.elements_[i] * g.elements_[j]);
      if (k < 0) throw std::logic_error("icosahedral group is not closed");
      g.cayley_[i * kNumRotations + j] = k;
      if (k == 0) g.inverse_[i] = j;
    }
  }

  const double adj_dot = 1.0 / std::sqrt(5.0);
  for (int a = 0; a < kNumAnchors; ++a) {
    int n = 0;
    for (int b = 0; b < kNumAnchors; ++b) {
      const double d = g.vertices_[a].dot(g.vertices_[b]);
      if (std::abs(d - adj_dot) < 1e-9) {
        if (n == 5) throw std::logic_error("vertex has more than five neighbours");
        g.adjacency_[a][n++] = b;
      }
      if (std::abs(d + 1.0) < 1e-9) g.antipode_[a] = b;
    }
    if (n != 5) throw std::logic_error("vertex does not have five neighbours");
  }
  return g;
}

const IcosaGroup& IcosaGroup::instance() {
  static const IcosaGroup group = build();
  return group;
}

std::array<int, kStabilizerSize> IcosaGroup::stabilizer(AnchorIndex a) const {
  std::array<int, kStabilizerSize> out{};
  int n = 0;
  for (int r = 0; r < kNumRotations; ++r) {
    if (perms_[r][a.a] == a.a) {
      if (n == kStabilizerSize) throw std::logic_error("stabilizer larger than five");
      out[n++] = r;
    }
  }
  if (n != kStabilizerSize) throw std::logic_error("stabilizer smaller than five");
  return out;
}

GroupProjection IcosaGroup::project_to_group(const Mat3& r) const {
  GroupProjection best{0, rotation_geodesic_deg(r, elements_[0])};
  for (int i = 1; i < kNumRotations; ++i) {
    const double d = rotation_geodesic_deg(r, elements_[i]);
    if (d < best.residual_deg) best = {i, d};
  }
  return best;
}

std::uint64_t IcosaGroup::cayley_checksum() const {
  std::vector<std::int32_t> t(cayley_.begin(), cayley_.end());
  return fnv1a(t.data(), t.size() * sizeof(std::int32_t));
}

std::uint64_t IcosaGroup::anchor_ordering_hash() const {
  // Rounded to 1e-9 so the hash is insensitive to last-bit noise.
  std::vector<std::int64_t> q;
  for (const Vec3& v : vertices_)
    for (int i = 0; i < 3; ++i) q.push_back(static_cast<std::int64_t>(std::llround(v[i] * 1e9)));
  return fnv1a(q.data(), q.size() * sizeof(std::int64_t));
}

std::vector<GroupCheckLine> check_group(const IcosaGroup& g) {
  std::vector<GroupCheckLine> out;
  auto add = [&](std::string name, bool ok, std::string detail) {
    out.push_back({std::move(name), ok, std::move(detail)});
  };
  const auto& el = g.elements();
  const int n = static_cast<int>(el.size());
  add("element count", n == kNumRotations, std::to_string(n) + " elements");
  if (n != kNumRotations) return out;

  add("identity at index 0", max_abs_diff(el[0], Mat3::Identity()) <= 1e-12, "");

  double worst_orth = 0.0, worst_det = 0.0;
  for (const Mat3& m : el) {
    worst_orth = std::max(worst_orth, max_abs_diff(m.transpose() * m, Mat3::Identity()));
    worst_det = std::max(worst_det, std::abs(m.determinant() - 1.0));
  }
  add("orthogonality", worst_orth <= 1e-12, "max |R^T R - I| = " + std::to_string(worst_orth));
  add("determinant", worst_det <= 1e-12, "max |det R - 1| = " + std::to_string(worst_det));

  double min_sep = 1e9;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) min_sep = std::min(min_sep, max_abs_diff(el[i], el[j]));
  add("distinct elements", min_sep > 1e-3, "min separation " + std::to_string(min_sep));

  double worst_closure = 0.0;
  bool latin = true;
  for (int i = 0; i < n; ++i) {
    std::vector<int> row_seen(n, 0), col_seen(n, 0);
    for (int j = 0; j < n; ++j) {
      worst_closure = std::max(worst_closure, max_abs_diff(el[i] * el[j], el[g.compose(i, j)]));
      row_seen[g.compose(i, j)]++;
      col_seen[g.compose(j, i)]++;
    }
    latin = latin && std::all_of(row_seen.begin(), row_seen.end(), [](int c) { return c == 1; }) &&
            std::all_of(col_seen.begin(), col_seen.end(), [](int c) { return c == 1; });
  }
  add("closure", worst_closure <= 1e-12, "max product residual " + std::to_string(worst_closure));
  add("cayley latin square", latin, "");

  bool inv_ok = true;
  for (int i = 0; i < n; ++i)
    inv_ok = inv_ok && g.compose(i, g.inverse(i)) == 0 && g.compose(g.inverse(i), i) == 0 &&
             max_abs_diff(el[g.inverse(i)], el[i].transpose()) <= 1e-12;
  add("inverses", inv_ok, "");

  double worst_assoc = 0.0;
  bool assoc_table = true;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const Mat3 ij = el[i] * el[j];
      for (int k = 0; k < n; ++k) {
        worst_assoc = std::max(worst_assoc, max_abs_diff(ij * el[k], el[i] * (el[j] * el[k])));
        assoc_table = assoc_table &&
                      g.compose(g.compose(i, j), k) == g.compose(i, g.compose(j, k));
      }
    }
  add("associativity", worst_assoc <= 1e-12 && assoc_table,
      "max residual " + std::to_string(worst_assoc));

  double worst_vertex = 0.0;
  for (int r = 0; r < n; ++r)
    for (int a = 0; a < kNumAnchors; ++a)
      worst_vertex = std::max(
          worst_vertex,
          (el[r] * g.vertex(a) - g.vertex(g.vertex_permutation(r)[a])).cwiseAbs().maxCoeff());
  add("vertex action", worst_vertex <= 1e-9, "max residual " + std::to_string(worst_vertex));

  int hom_fail = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const auto& pij = g.vertex_permutation(g.compose(i, j));
      const auto& pi = g.vertex_permutation(i);
      const auto& pj = g.vertex_permutation(j);
      for (int a = 0; a < kNumAnchors; ++a)
        if (pij[a] != pi[pj[a]]) {
          ++hom_fail;
          break;
        }
    }
  add("permutation homomorphism (3600 pairs)", hom_fail == 0,
      std::to_string(hom_fail) + " failing pairs");

  bool stab_ok = true;
  for (int a = 0; a < kNumAnchors; ++a) {
    try {
      const auto s = g.stabilizer(AnchorIndex(a));
      stab_ok = stab_ok && s[0] == 0;
    } catch (const std::logic_error&) {
      stab_ok = false;
    }
  }
  add("stabilizers of size 5", stab_ok, "");

  bool orbit_ok = true;
  for (int a = 0; a < kNumAnchors; ++a) {
    std::array<bool, kNumAnchors> hit{};
    for (int r = 0; r < n; ++r) hit[g.vertex_permutation(r)[a]] = true;
    orbit_ok = orbit_ok && std::all_of(hit.begin(), hit.end(), [](bool b) { return b; });
  }
  add("vertex orbit is all 12", orbit_ok, "");
  return out;
}

}  // namespace surfreg
