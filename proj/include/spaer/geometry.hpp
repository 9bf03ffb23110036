#pragma once

#include "spaer/svd3.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>

namespace spaer {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kOrthogonalityTolerance = 1e-9;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Q(v) = R v + T with R a proper rotation and T in mm.
struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    static RigidTransform identity() { return {}; }
    static RigidTransform from_translation(const Vec3& t) { return {Mat3::Identity(), t}; }
    static RigidTransform from_rotation(const Mat3& r) { return {r, Vec3::Zero()}; }

    /// 4x4 homogeneous matrix, mostly for tests and debugging.
    [[nodiscard]] Eigen::Matrix4d homogeneous() const {
        Eigen::Matrix4d h = Eigen::Matrix4d::Identity();
        h.topLeftCorner<3, 3>() = rotation;
        h.topRightCorner<3, 1>() = translation;
        return h;
    }
};

/// Largest elementwise deviation of R^T R from the identity.
inline double orthogonality_error(const Mat3& r) {
    return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
}

inline bool is_rotation(const Mat3& r, double tol = kOrthogonalityTolerance) {
    return r.allFinite() && orthogonality_error(r) <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

inline Vec3 apply(const RigidTransform& q, const Vec3& v) { return q.rotation * v + q.translation; }

/// apply(compose(a, b), v) == apply(a, apply(b, v)).
inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
    RigidTransform out{a.rotation * b.rotation, a.rotation * b.translation + a.translation};
    // Long chains drift off SO(3); project back once the drift is measurable.
    if (orthogonality_error(out.rotation) > kOrthogonalityTolerance) out.rotation = nearest_rotation(out.rotation);
    return out;
}

inline RigidTransform inverse(const RigidTransform& q) {
    const Mat3 rt = q.rotation.transpose();
    return {rt, -(rt * q.translation)};
}

/// Minimal rotation angle between two orientations, in degrees.
///
/// Equal to acos((tr(r1 r2^T) - 1) / 2). Below 90 degrees it is evaluated from
/// the chord |r1 - r2|_F = 2 sqrt(2) sin(theta / 2), which is exactly 0 for equal
/// inputs; above, as atan2(|axis|, cos) so angles near 180 degrees keep precision.
inline double geodesic_angle(const Mat3& r1, const Mat3& r2) {
    const double chord = (r1 - r2).norm();
    if (chord < 2.0) return rad2deg(2.0 * std::asin(chord / (2.0 * std::sqrt(2.0))));
    const Mat3 m = r1 * r2.transpose();
    const double c = std::clamp((m.trace() - 1.0) * 0.5, -1.0, 1.0);
    const Vec3 axis(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1));
    const double s = 0.5 * axis.norm();
    return rad2deg(std::atan2(s, c));
}

namespace detail {
// Exact cos/sin for multiples of 90 degrees so axis-aligned rotations are exact permutations.
inline std::pair<double, double> cos_sin_deg(double deg) {
    const double quarter = deg / 90.0;
    if (quarter == std::round(quarter)) {
        switch (static_cast<int>(((static_cast<long long>(std::round(quarter)) % 4) + 4) % 4)) {
            case 0: return {1.0, 0.0};
            case 1: return {0.0, 1.0};
            case 2: return {-1.0, 0.0};
            default: return {0.0, -1.0};
        }
    }
    const double r = deg2rad(deg);
    return {std::cos(r), std::sin(r)};
}
} // namespace detail

inline Mat3 rot_x(double deg) {
    const auto [c, s] = detail::cos_sin_deg(deg);
    Mat3 r;
    r << 1, 0, 0, 0, c, -s, 0, s, c;
    return r;
}

inline Mat3 rot_y(double deg) {
    const auto [c, s] = detail::cos_sin_deg(deg);
    Mat3 r;
    r << c, 0, s, 0, 1, 0, -s, 0, c;
    return r;
}

inline Mat3 rot_z(double deg) {
    const auto [c, s] = detail::cos_sin_deg(deg);
    Mat3 r;
    r << c, -s, 0, s, c, 0, 0, 0, 1;
    return r;
}

/// Rotation of `deg` degrees about a (not necessarily unit) axis.
inline Mat3 axis_angle(const Vec3& axis, double deg) {
    return Eigen::AngleAxisd(deg2rad(deg), axis.normalized()).toRotationMatrix();
}

enum class EulerOrder { XYZ, XZY, YXZ, YZX, ZXY, ZYX };

/// Intrinsic Tait-Bryan angles in degrees. For order XYZ the result is
/// Rx(rx) * Ry(ry) * Rz(rz): rotate about x, then about the new y, then the new z.
inline Mat3 rotation_from_euler(double rx, double ry, double rz, EulerOrder order = EulerOrder::XYZ) {
    const Mat3 x = rot_x(rx), y = rot_y(ry), z = rot_z(rz);
    switch (order) {
        case EulerOrder::XYZ: return x * y * z;
        case EulerOrder::XZY: return x * z * y;
        case EulerOrder::YXZ: return y * x * z;
        case EulerOrder::YZX: return y * z * x;
        case EulerOrder::ZXY: return z * x * y;
        case EulerOrder::ZYX: return z * y * x;
    }
    return x * y * z;
}

/// Unit quaternion, scalar first. Canonical form has w >= 0.
struct Quaternion {
    double w = 1.0;
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
};

inline Quaternion to_quaternion(const Mat3& r) {
    // Shepperd: branch on the largest of (trace, diagonal) to avoid cancellation.
    Quaternion q;
    const double tr = r.trace();
    if (tr >= r(0, 0) && tr >= r(1, 1) && tr >= r(2, 2)) {
        const double s = 2.0 * std::sqrt(1.0 + tr);
        q = {0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s};
    } else if (r(0, 0) >= r(1, 1) && r(0, 0) >= r(2, 2)) {
        const double s = 2.0 * std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2));
        q = {(r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s};
    } else if (r(1, 1) >= r(2, 2)) {
        const double s = 2.0 * std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2));
        q = {(r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s, (r(1, 2) + r(2, 1)) / s};
    } else {
        const double s = 2.0 * std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1));
        q = {(r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, 0.25 * s};
    }
    const double n = std::sqrt(q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z);
    const double sign = q.w < 0.0 ? -1.0 : 1.0;
    return {sign * q.w / n, sign * q.x / n, sign * q.y / n, sign * q.z / n};
}

/// Normalizes the input before converting.
inline Mat3 to_matrix(const Quaternion& in) {
    const double n = std::sqrt(in.w * in.w + in.x * in.x + in.y * in.y + in.z * in.z);
    const double w = in.w / n, x = in.x / n, y = in.y / n, z = in.z / n;
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

/// Passes the rotation through its quaternion form (the representation used in files).
inline RigidTransform quaternion_roundtrip(const RigidTransform& q) {
    return {to_matrix(to_quaternion(q.rotation)), q.translation};
}

} // namespace spaer
