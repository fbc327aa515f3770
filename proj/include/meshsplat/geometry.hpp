#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <numbers>

namespace meshsplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

inline constexpr double kPi = std::numbers::pi;

/// Wraps an angle to (-pi, pi].
double wrap_angle(double radians);

/// Flips the quaternion sign so that w >= 0, or, when w == 0, the first
/// nonzero vector component is positive. Also renormalizes.
Quat canonical(const Quat& q);

/// Sign-insensitive quaternion distance: min(|a - b|, |a + b|) over coeffs.
double quat_distance(const Quat& a, const Quat& b);

/// Quaternion <-> (w, x, y, z) vectors; Eigen stores (x, y, z, w) internally.
Vec4 to_wxyz(const Quat& q);
Quat from_wxyz(const Vec4& wxyz);

Quat axis_angle_to_quat(const Vec3& axis_angle);
Vec3 quat_to_axis_angle(const Quat& q);

Mat3 skew(const Vec3& v);

/// Right Jacobian of SO(3): exp(w + d) ~= exp(w) exp(Jr(w) d).
Mat3 right_jacobian_so3(const Vec3& axis_angle);

/// Rotation matrix of the unit quaternion (w, x, y, z) written with the
/// unit-norm formula, and its partial derivatives with respect to each of
/// the four components (same order). Used by the analytic backward passes.
Mat3 rotation_from_wxyz(const Vec4& q);
std::array<Mat3, 4> rotation_derivatives_wxyz(const Vec4& q);

/// Left-multiplication matrix: to_wxyz(a * b) == left_product_matrix(a) * to_wxyz(b).
Eigen::Matrix4d left_product_matrix(const Quat& a);
/// Right-multiplication matrix: to_wxyz(a * b) == right_product_matrix(b) * to_wxyz(a).
Eigen::Matrix4d right_product_matrix(const Quat& b);

}  // namespace meshsplat
