#include "meshsplat/geometry.hpp"

#include <cmath>

namespace meshsplat {

double wrap_angle(double radians) {
  double r = std::remainder(radians, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  if (r > kPi) r -= 2.0 * kPi;
  return r;
}

Quat canonical(const Quat& q) {
  Quat n = q.normalized();
  const double lead[4] = {n.w(), n.x(), n.y(), n.z()};
  for (double c : lead) {
    if (c > 0.0) return n;
    if (c < 0.0) return Quat(-n.w(), -n.x(), -n.y(), -n.z());
  }
  return n;
}

double quat_distance(const Quat& a, const Quat& b) {
  const double minus = (a.coeffs() - b.coeffs()).norm();
  const double plus = (a.coeffs() + b.coeffs()).norm();
  return std::min(minus, plus);
}

Vec4 to_wxyz(const Quat& q) { return {q.w(), q.x(), q.y(), q.z()}; }

Quat from_wxyz(const Vec4& wxyz) { return Quat(wxyz[0], wxyz[1], wxyz[2], wxyz[3]); }

Quat axis_angle_to_quat(const Vec3& axis_angle) {
  const double angle = axis_angle.norm();
  if (angle < 1e-12) {
    // second-order series keeps the map smooth at the origin
    Quat q(1.0, 0.5 * axis_angle.x(), 0.5 * axis_angle.y(), 0.5 * axis_angle.z());
    return q.normalized();
  }
  return Quat(Eigen::AngleAxisd(angle, axis_angle / angle));
}

Vec3 quat_to_axis_angle(const Quat& q) {
  Quat c = canonical(q);
  const double s = c.vec().norm();
  if (s < 1e-12) return 2.0 * c.vec();
  const double angle = 2.0 * std::atan2(s, c.w());
  return c.vec() * (angle / s);
}

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Mat3 right_jacobian_so3(const Vec3& axis_angle) {
  const double theta = axis_angle.norm();
  const Mat3 k = skew(axis_angle);
  double a;
  double b;
  if (theta < 1e-5) {
    const double t2 = theta * theta;
    a = 0.5 - t2 / 24.0;
    b = 1.0 / 6.0 - t2 / 120.0;
  } else {
    const double t2 = theta * theta;
    a = (1.0 - std::cos(theta)) / t2;
    b = (theta - std::sin(theta)) / (t2 * theta);
  }
  return Mat3::Identity() - a * k + b * k * k;
}

Mat3 rotation_from_wxyz(const Vec4& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

std::array<Mat3, 4> rotation_derivatives_wxyz(const Vec4& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  std::array<Mat3, 4> d;
  d[0] << 0, -2 * z, 2 * y,
          2 * z, 0, -2 * x,
          -2 * y, 2 * x, 0;
  d[1] << 0, 2 * y, 2 * z,
          2 * y, -4 * x, -2 * w,
          2 * z, 2 * w, -4 * x;
  d[2] << -4 * y, 2 * x, 2 * w,
          2 * x, 0, 2 * z,
          -2 * w, 2 * z, -4 * y;
  d[3] << -4 * z, -2 * w, 2 * x,
          2 * w, -4 * z, 2 * y,
          2 * x, 2 * y, 0;
  return d;
}

Eigen::Matrix4d left_product_matrix(const Quat& a) {
  const double w = a.w(), x = a.x(), y = a.y(), z = a.z();
  Eigen::Matrix4d m;
  m << w, -x, -y, -z,
       x, w, -z, y,
       y, z, w, -x,
       z, -y, x, w;
  return m;
}

Eigen::Matrix4d right_product_matrix(const Quat& b) {
  const double w = b.w(), x = b.x(), y = b.y(), z = b.z();
  Eigen::Matrix4d m;
  m << w, -x, -y, -z,
       x, w, z, -y,
       y, -z, w, x,
       z, y, -x, w;
  return m;
}

}  // namespace meshsplat
