#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace surfreg {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

bool is_finite(const Vec3& v);

/// Unit quaternion with the canonical sign w >= 0 (first nonzero component
/// positive when w == 0), so q and -q share one representation.
class UnitQuaternion {
public:
  UnitQuaternion() = default;

  /// Normalizes and canonicalizes. Throws std::invalid_argument on
  /// non-finite or zero-norm input.
  UnitQuaternion(double w, double x, double y, double z);

  static UnitQuaternion identity() { return {}; }
  static UnitQuaternion from_axis_angle(const Vec3& axis, double angle_rad);
  static UnitQuaternion from_matrix(const Mat3& r);

  double w() const { return w_; }
  double x() const { return x_; }
  double y() const { return y_; }
  double z() const { return z_; }

  UnitQuaternion operator*(const UnitQuaternion& o) const;
  UnitQuaternion conjugate() const;

private:
  double w_ = 1.0, x_ = 0.0, y_ = 0.0, z_ = 0.0;
};

Mat3 quat_to_matrix(const UnitQuaternion& q);

struct RigidTransform {
  UnitQuaternion rotation;
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }
  static RigidTransform from_matrix(const Mat3& r, const Vec3& t);

  Mat3 rotation_matrix() const { return quat_to_matrix(rotation); }
  Vec3 apply(const Vec3& p) const;
};

Vec3 apply(const RigidTransform& t, const Vec3& p);

/// compose(a, b) applies b first, then a.
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform inverse(const RigidTransform& t);

/// Checks that r is a rotation (orthogonal, det 1) within tol.
bool is_rotation(const Mat3& r, double tol);

/// Geodesic distance between two rotations in degrees, in [0, 180].
/// Throws std::invalid_argument when either input is off SO(3) by more
/// than 1e-6.
double rotation_geodesic_deg(const Mat3& ra, const Mat3& rb);

inline constexpr double kPi = 3.14159265358979323846;
inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

}  // namespace surfreg
