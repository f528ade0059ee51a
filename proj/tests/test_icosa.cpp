#include <algorithm>
#include <chrono>
#include <random>
#include <map>
#include <set>

#include "doctest.h"
#include "surfreg/icosa.hpp"
#include "test_util.hpp"

using namespace surfreg;

TEST_CASE("build_group basics") {
  const auto t0 = std::chrono::steady_clock::now();
  const IcosaGroup g = IcosaGroup::build();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 1.0);
  REQUIRE(g.elements().size() == 60);
  CHECK((g.element(0) - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-12);
  for (int a = 0; a < 12; ++a) CHECK(g.vertex_permutation(0)[a] == a);
}

TEST_CASE("every group invariant holds") {
  for (const auto& line : check_group(IcosaGroup::instance())) {
    INFO(line.name << ": " << line.detail);
    CHECK(line.ok);
  }
}

TEST_CASE("canonical ordering is by angle then axis") {
  const auto& g = IcosaGroup::instance();
  for (int r = 1; r < 60; ++r) CHECK(g.angle(r) >= g.angle(r - 1) - 1e-6);
  // 1 identity, 12 of 72 deg, 20 of 120 deg, 12 of 144 deg, 15 half-turns
  std::map<long, int> counts;
  for (int r = 0; r < 60; ++r) counts[std::lround(rad2deg(g.angle(r)))]++;
  CHECK(counts[0] == 1);
  CHECK(counts[72] == 12);
  CHECK(counts[120] == 20);
  CHECK(counts[144] == 12);
  CHECK(counts[180] == 15);
  // Rebuilding gives the same order.
  const IcosaGroup again = IcosaGroup::build();
  CHECK(again.cayley_checksum() == g.cayley_checksum());
  CHECK(again.anchor_ordering_hash() == g.anchor_ordering_hash());
}

TEST_CASE("five-fold rotations fix exactly their axis pair") {
  const auto& g = IcosaGroup::instance();
  int five_fold = 0;
  for (int r = 1; r < 60; ++r) {
    const long deg = std::lround(rad2deg(g.angle(r)));
    if (deg != 72 && deg != 144) continue;
    ++five_fold;
    int fixed = 0;
    for (int a = 0; a < 12; ++a) fixed += g.vertex_permutation(r)[a] == a;
    CHECK(fixed == 2);
  }
  CHECK(five_fold == 24);
}

TEST_CASE("stabilizers") {
  const auto& g = IcosaGroup::instance();
  for (int a = 0; a < 12; ++a) {
    const auto s = g.stabilizer(AnchorIndex(a));
    CHECK(s[0] == 0);
    std::set<int> uniq(s.begin(), s.end());
    CHECK(uniq.size() == 5);
    for (int r : s) {
      CHECK((g.element(r) * g.vertex(a) - g.vertex(a)).norm() < 1e-9);
      if (r != 0) CHECK(std::abs(std::abs(g.axis(r).dot(g.vertex(a))) - 1.0) < 1e-9);
      // closed under composition: a cyclic subgroup
      for (int q : s) CHECK(uniq.count(g.compose(r, q)) == 1);
    }
  }
  CHECK_THROWS_AS(AnchorIndex(12), std::out_of_range);
  CHECK_THROWS_AS(RotationOrder(-1), std::out_of_range);
}

TEST_CASE("project_to_group") {
  const auto& g = IcosaGroup::instance();
  const auto p17 = g.project_to_group(g.element(17));
  CHECK(p17.element == 17);
  CHECK(p17.residual_deg < 1e-6);

  const Mat3 tilt = Eigen::AngleAxisd(deg2rad(1.0), Vec3::UnitZ()).toRotationMatrix();
  const auto p0 = g.project_to_group(tilt);
  CHECK(p0.element == 0);
  CHECK(std::abs(p0.residual_deg - 1.0) < 1e-6);

  std::mt19937_64 rng(99);
  double worst = 0.0;
  for (int k = 0; k < 100000; ++k) {
    const Mat3 r = quat_to_matrix(surfreg::testing::random_quaternion(rng));
    const auto p = g.project_to_group(r);
    worst = std::max(worst, p.residual_deg);
    if (k < 200) {
      // left invariance of the residual
      for (int e = 0; e < 60; e += 7)
        CHECK(std::abs(g.project_to_group(g.element(e) * r).residual_deg - p.residual_deg) < 1e-9);
    }
  }
  // Covering radius: twice the angular circumradius of a 600-cell cell,
  // 44.4775 degrees (computed independently from the 600-cell vertices).
  CHECK(worst <= 44.4776);
  CHECK(worst > 42.0);
}
