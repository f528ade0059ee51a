#include "surfreg/geom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace surfreg {

bool is_finite(const Vec3& v) {
  return std::isfinite(v.x()) && std::isfinite(v.y()) && std::isfinite(v.z());
}

UnitQuaternion::UnitQuaternion(double w, double x, double y, double z) {
  if (!std::isfinite(w) || !std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
    throw std::invalid_argument("quaternion has non-finite component");
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  if (n == 0.0) throw std::invalid_argument("zero quaternion");
  w_ = w / n;
  x_ = x / n;
  y_ = y / n;
  z_ = z / n;
  bool flip = w_ < 0.0;
  if (w_ == 0.0) {
    // first nonzero of (x, y, z) positive
    if (x_ != 0.0) flip = x_ < 0.0;
    else if (y_ != 0.0) flip = y_ < 0.0;
    else flip = z_ < 0.0;
  }
  if (flip) {
    w_ = -w_;
    x_ = -x_;
    y_ = -y_;
    z_ = -z_;
  }
}

UnitQuaternion UnitQuaternion::from_axis_angle(const Vec3& axis, double angle_rad) {
  const double n = axis.norm();
  if (!is_finite(axis) || !std::isfinite(angle_rad) || n == 0.0)
    throw std::invalid_argument("invalid axis-angle");
  const Vec3 u = axis / n;
  const double s = std::sin(angle_rad / 2.0);
  return {std::cos(angle_rad / 2.0), u.x() * s, u.y() * s, u.z() * s};
}

UnitQuaternion UnitQuaternion::from_matrix(const Mat3& r) {
  if (!r.allFinite()) throw std::invalid_argument("rotation matrix has non-finite entries");
  Eigen::Quaterniond q(r);
  return {q.w(), q.x(), q.y(), q.z()};
}

UnitQuaternion UnitQuaternion::operator*(const UnitQuaternion& o) const {
  return {w_ * o.w_ - x_ * o.x_ - y_ * o.y_ - z_ * o.z_,
          w_ * o.x_ + x_ * o.w_ + y_ * o.z_ - z_ * o.y_,
          w_ * o.y_ - x_ * o.z_ + y_ * o.w_ + z_ * o.x_,
          w_ * o.z_ + x_ * o.y_ - y_ * o.x_ + z_ * o.w_};
}

UnitQuaternion UnitQuaternion::conjugate() const { return {w_, -x_, -y_, -z_}; }

Mat3 quat_to_matrix(const UnitQuaternion& q) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  if (!std::isfinite(w) || !std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
    throw std::invalid_argument("quaternion has non-finite component");
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

RigidTransform RigidTransform::from_matrix(const Mat3& r, const Vec3& t) {
  if (!is_rotation(r, 1e-6)) throw std::invalid_argument("matrix is not a rotation");
  return {UnitQuaternion::from_matrix(r), t};
}

Vec3 RigidTransform::apply(const Vec3& p) const { return rotation_matrix() * p + translation; }

Vec3 apply(const RigidTransform& t, const Vec3& p) { return t.apply(p); }

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  return {a.rotation * b.rotation, a.rotation_matrix() * b.translation + a.translation};
}

RigidTransform inverse(const RigidTransform& t) {
  const UnitQuaternion qi = t.rotation.conjugate();
  return {qi, -(quat_to_matrix(qi) * t.translation)};
}

bool is_rotation(const Mat3& r, double tol) {
  if (!r.allFinite()) return false;
  const double orth = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  return orth <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

double rotation_geodesic_deg(const Mat3& ra, const Mat3& rb) {
  if (!is_rotation(ra, 1e-6) || !is_rotation(rb, 1e-6))
    throw std::invalid_argument("rotation_geodesic_deg: input is not a rotation matrix");
  // Same value as acos(clamp((tr - 1) / 2)), but atan2 keeps full precision
  // near 0 and 180 degrees.
  const Mat3 rel = ra.transpose() * rb;
  const double c = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
  const double s = Vec3(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1)).norm() / 2.0;
  return rad2deg(std::atan2(s, c));
}

}  // namespace surfreg
