#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "surfreg/geom.hpp"
#include "test_util.hpp"

using namespace surfreg;
using surfreg::testing::random_quaternion;
using surfreg::testing::random_transform;
using surfreg::testing::random_vec;

namespace {

double max_diff(const RigidTransform& a, const RigidTransform& b) {
  return std::max((a.rotation_matrix() - b.rotation_matrix()).cwiseAbs().maxCoeff(),
                  (a.translation - b.translation).cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("quat_to_matrix examples") {
  CHECK((quat_to_matrix(UnitQuaternion::identity()) - Mat3::Identity()).norm() == 0.0);

  const double h = std::sqrt(0.5);
  const Mat3 rz = quat_to_matrix(UnitQuaternion(h, 0, 0, h));
  CHECK((rz * Vec3(1, 0, 0) - Vec3(0, 1, 0)).norm() < 1e-12);

  std::mt19937_64 rng(3);
  const UnitQuaternion q = random_quaternion(rng);
  const UnitQuaternion neg(-q.w(), -q.x(), -q.y(), -q.z());
  CHECK((quat_to_matrix(q) - quat_to_matrix(neg)).norm() < 1e-15);
}

TEST_CASE("quaternion canonical sign and validation") {
  const UnitQuaternion q(-0.5, 0.5, 0.5, 0.5);
  CHECK(q.w() > 0.0);
  const UnitQuaternion half_turn(0.0, -1.0, 0.0, 0.0);
  CHECK(half_turn.x() == 1.0);
  CHECK_THROWS_AS(UnitQuaternion(std::nan(""), 0, 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(UnitQuaternion(0, 0, 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(UnitQuaternion(std::numeric_limits<double>::infinity(), 0, 0, 0),
                  std::invalid_argument);
}

TEST_CASE("quat_to_matrix is orthogonal for random unit quaternions") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 2000; ++i) {
    const Mat3 r = quat_to_matrix(random_quaternion(rng));
    CHECK((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(std::abs(r.determinant() - 1.0) < 1e-9);
  }
}

TEST_CASE("apply examples") {
  CHECK((apply(RigidTransform::identity(), Vec3(1, 2, 3)) - Vec3(1, 2, 3)).norm() == 0.0);
  CHECK((apply({UnitQuaternion::identity(), Vec3(0, 0, 1)}, Vec3::Zero()) - Vec3(0, 0, 1)).norm() ==
        0.0);
  const RigidTransform t{UnitQuaternion::from_axis_angle(Vec3::UnitZ(), kPi / 2), Vec3(1, 0, 0)};
  CHECK((apply(t, Vec3(1, 0, 0)) - Vec3(1, 1, 0)).norm() < 1e-12);
}

TEST_CASE("compose and inverse") {
  std::mt19937_64 rng(5);
  const RigidTransform t = random_transform(rng);
  CHECK(max_diff(compose(RigidTransform::identity(), t), t) < 1e-12);
  CHECK(max_diff(inverse(RigidTransform::identity()), RigidTransform::identity()) == 0.0);

  for (int i = 0; i < 100; ++i) {
    const RigidTransform a = random_transform(rng);
    const RigidTransform b = random_transform(rng);
    const RigidTransform c = random_transform(rng);
    CHECK(max_diff(compose(a, inverse(a)), RigidTransform::identity()) < 1e-9);
    CHECK(max_diff(compose(compose(a, b), c), compose(a, compose(b, c))) < 1e-9);
    const Vec3 p = random_vec(rng, 3.0);
    CHECK((apply(compose(a, b), p) - apply(a, apply(b, p))).norm() < 1e-9);
  }
}

TEST_CASE("rotation_geodesic_deg examples") {
  const Mat3 i = Mat3::Identity();
  CHECK(rotation_geodesic_deg(i, i) == 0.0);
  const Mat3 z180 = Eigen::AngleAxisd(kPi, Vec3::UnitZ()).toRotationMatrix();
  CHECK(rotation_geodesic_deg(i, z180) == doctest::Approx(180.0).epsilon(1e-12));
  const Mat3 x90 = Eigen::AngleAxisd(kPi / 2, Vec3::UnitX()).toRotationMatrix();
  CHECK(rotation_geodesic_deg(i, x90) == doctest::Approx(90.0).epsilon(1e-12));

  Mat3 skewed = i;
  skewed(0, 1) = 1e-3;
  CHECK_THROWS_AS(rotation_geodesic_deg(i, skewed), std::invalid_argument);
}

TEST_CASE("rotation_geodesic_deg is a metric on random triples") {
  std::mt19937_64 rng(17);
  for (int k = 0; k < 1000; ++k) {
    const Mat3 a = quat_to_matrix(random_quaternion(rng));
    const Mat3 b = quat_to_matrix(random_quaternion(rng));
    const Mat3 c = quat_to_matrix(random_quaternion(rng));
    const double ab = rotation_geodesic_deg(a, b);
    CHECK(std::abs(ab - rotation_geodesic_deg(b, a)) < 1e-6);
    CHECK(rotation_geodesic_deg(a, c) <= ab + rotation_geodesic_deg(b, c) + 1e-6);
    CHECK(ab >= 0.0);
    CHECK(ab <= 180.0);
  }
}

TEST_CASE("matrix round trip through the quaternion") {
  std::mt19937_64 rng(23);
  for (int k = 0; k < 200; ++k) {
    const UnitQuaternion q = random_quaternion(rng);
    const UnitQuaternion back = UnitQuaternion::from_matrix(quat_to_matrix(q));
    CHECK(std::abs(back.w() - q.w()) < 1e-9);
    CHECK(std::abs(back.x() - q.x()) < 1e-9);
  }
}
