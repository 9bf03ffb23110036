#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <utility>

namespace spaer {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Svd3 {
    Mat3 u = Mat3::Identity();
    Vec3 singular = Vec3::Zero(); // descending, non-negative
    Mat3 v = Mat3::Identity();
};

inline constexpr int kSvdSweeps = 30;
inline constexpr double kSvdTolerance = 1e-12;

/// m = u * diag(singular) * v^T.
///
/// One-sided (Hestenes) Jacobi: plane rotations applied on the right
/// orthogonalize the columns of m. Each rotation is the Jacobi rotation that
/// diagonalizes the matching 2x2 block of m^T m, so v accumulates the
/// eigenvectors of m^T m without ever forming the product (which would square
/// the condition number). u is recovered from the orthogonal columns, with a
/// Gram-Schmidt pass that completes it to an orthonormal basis when m is rank
/// deficient.
inline Svd3 svd3(const Mat3& m) {
    Mat3 a = m;
    Mat3 v = Mat3::Identity();

    for (int sweep = 0; sweep < kSvdSweeps; ++sweep) {
        bool rotated = false;
        for (int p = 0; p < 2; ++p) {
            for (int q = p + 1; q < 3; ++q) {
                const double alpha = a.col(p).squaredNorm();
                const double beta = a.col(q).squaredNorm();
                const double gamma = a.col(p).dot(a.col(q));
                if (gamma == 0.0 || std::abs(gamma) <= kSvdTolerance * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                const Vec3 ap = a.col(p);
                const Vec3 aq = a.col(q);
                a.col(p) = c * ap - s * aq;
                a.col(q) = s * ap + c * aq;
                const Vec3 vp = v.col(p);
                const Vec3 vq = v.col(q);
                v.col(p) = c * vp - s * vq;
                v.col(q) = s * vp + c * vq;
            }
        }
        if (!rotated) break;
    }

    std::array<int, 3> order{0, 1, 2};
    Vec3 norms(a.col(0).norm(), a.col(1).norm(), a.col(2).norm());
    std::sort(order.begin(), order.end(), [&](int i, int j) { return norms[i] > norms[j]; });

    Svd3 out;
    Mat3 cols;
    for (int i = 0; i < 3; ++i) {
        out.singular[i] = norms[order[i]];
        out.v.col(i) = v.col(order[i]);
        cols.col(i) = a.col(order[i]);
    }

    const double largest = out.singular[0];
    const double negligible = largest * 1e-13;
    for (int i = 0; i < 3; ++i) {
        Vec3 w = cols.col(i);
        for (int j = 0; j < i; ++j) w -= out.u.col(j).dot(w) * out.u.col(j);
        double n = w.norm();
        if (largest == 0.0 || out.singular[i] <= negligible || n <= negligible) {
            // Null direction: pick any unit vector orthogonal to the previous columns.
            if (i == 2) {
                w = out.u.col(0).cross(out.u.col(1));
            } else {
                int axis = 0;
                Vec3 best = Vec3::Zero();
                double best_norm = -1.0;
                for (axis = 0; axis < 3; ++axis) {
                    Vec3 e = Vec3::Unit(axis);
                    for (int j = 0; j < i; ++j) e -= out.u.col(j).dot(e) * out.u.col(j);
                    if (e.norm() > best_norm) {
                        best_norm = e.norm();
                        best = e;
                    }
                }
                w = best;
            }
            n = w.norm();
        }
        out.u.col(i) = w / n;
    }
    return out;
}

/// Nearest rotation (polar factor with det = +1).
inline Mat3 nearest_rotation(const Mat3& m) {
    const Svd3 s = svd3(m);
    Mat3 d = Mat3::Identity();
    d(2, 2) = (s.u * s.v.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    return s.u * d * s.v.transpose();
}

} // namespace spaer
