#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "surfreg/geom.hpp"

namespace surfreg {

inline constexpr int kNumAnchors = 12;
inline constexpr int kNumRotations = 60;
inline constexpr int kStabilizerSize = 5;

/// Index of an icosahedron vertex (one of the 12 anchor directions).
struct AnchorIndex {
  int a = 0;
  explicit AnchorIndex(int v);
};

/// Index of a group element in the canonical element ordering.
struct RotationOrder {
  int r = 0;
  explicit RotationOrder(int v);
};

using VertexPerm = std::array<int, kNumAnchors>;

struct GroupProjection {
  int element = 0;
  double residual_deg = 0.0;
};

/// The 60 proper rotations of the icosahedron together with their action on
/// the 12 vertices. Element 0 is the identity; elements are ordered by
/// rotation angle, then lexicographically by rotation axis.
class IcosaGroup {
public:
  static IcosaGroup build();

  /// Process-wide instance, built on first use.
  static const IcosaGroup& instance();

  const Mat3& element(int r) const { return elements_.at(r); }
  const std::vector<Mat3>& elements() const { return elements_; }
  const Vec3& vertex(int a) const { return vertices_.at(a); }
  const std::array<Vec3, kNumAnchors>& vertices() const { return vertices_; }

  /// perm such that g_r * v_a == v_{perm[a]}.
  const VertexPerm& vertex_permutation(int r) const { return perms_.at(r); }
  const VertexPerm& inverse_vertex_permutation(int r) const { return inv_perms_.at(r); }

  /// Index of g_i * g_j.
  int compose(int i, int j) const { return cayley_[i * kNumRotations + j]; }
  int inverse(int r) const { return inverse_.at(r); }
  const std::vector<int>& cayley() const { return cayley_; }

  /// The five elements fixing vertex a, identity first.
  std::array<int, kStabilizerSize> stabilizer(AnchorIndex a) const;

  /// The five vertices adjacent to a on the icosahedron, ascending.
  const std::array<int, 5>& adjacent(int a) const { return adjacency_.at(a); }
  int antipode(int a) const { return antipode_.at(a); }

  /// Nearest group element by geodesic distance, lowest index on ties.
  GroupProjection project_to_group(const Mat3& r) const;

  /// Rotation angle (radians) and unit axis of element r.
  double angle(int r) const { return angles_.at(r); }
  const Vec3& axis(int r) const { return axes_.at(r); }

  /// FNV-1a hashes used by the model file to detect ordering drift.
  std::uint64_t cayley_checksum() const;
  std::uint64_t anchor_ordering_hash() const;

private:
  std::vector<Mat3> elements_;
  std::vector<double> angles_;
  std::vector<Vec3> axes_;
  std::array<Vec3, kNumAnchors> vertices_{};
  std::vector<VertexPerm> perms_;
  std::vector<VertexPerm> inv_perms_;
  std::vector<int> cayley_;
  std::vector<int> inverse_;
  std::array<std::array<int, 5>, kNumAnchors> adjacency_{};
  std::array<int, kNumAnchors> antipode_{};
};

/// One line per group invariant; used by the `group-check` command.
struct GroupCheckLine {
  std::string name;
  bool ok = false;
  std::string detail;
};

std::vector<GroupCheckLine> check_group(const IcosaGroup& g);

}  // namespace surfreg
