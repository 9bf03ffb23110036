#pragma once

#include "spaer/eqfeatures.hpp"
#include "spaer/errors.hpp"
#include "spaer/geometry.hpp"
#include "spaer/svd3.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace spaer {

struct AlignmentResult {
    RigidTransform transform;
    double residual_rms = 0.0; ///< sqrt(sum_k w_k |R s_k + T - t_k|^2), weights summing to 1 (mm)
    double condition = 0.0;    ///< smallest / largest singular value of the cross-covariance
    std::size_t pairs = 0;     ///< number of point pairs that entered the fit
};

inline constexpr double kCollinearTolerance = 1e-9;

/// Closed-form weighted rigid fit of `target` onto `source` (centered Kabsch).
///
/// Pair k is used when both masses are positive, with weight min(mass_s, mass_t)
/// normalized to sum 1. Returns the (R, T) minimizing sum_k w_k |R s_k + T - t_k|^2
/// subject to det R = +1: H = sum_k w_k (s_k - c_s)(t_k - c_t)^T = U S V^T,
/// R = V diag(1, 1, det(V U^T)) U^T, T = c_t - R c_s.
inline AlignmentResult estimate_rigid(const PointCloud& source, const PointCloud& target) {
    if (source.size() != target.size())
        throw ShapeMismatch("point clouds differ in size: " + std::to_string(source.size()) + " vs " +
                            std::to_string(target.size()));
    const std::size_t k_count = source.size();
    for (std::size_t k = 0; k < k_count; ++k) {
        if (!source.points[k].allFinite() || !target.points[k].allFinite() || std::isnan(source.masses[k]) ||
            std::isnan(target.masses[k]))
            throw NonFiniteInput("non-finite point or mass at channel " + std::to_string(k));
    }

    std::vector<std::size_t> used;
    std::vector<double> w;
    double total = 0.0;
    for (std::size_t k = 0; k < k_count; ++k) {
        if (!source.valid(k) || !target.valid(k)) continue;
        const double wk = std::min(source.masses[k], target.masses[k]);
        used.push_back(k);
        w.push_back(wk);
        total += wk;
    }
    if (used.size() < 3 || !(total > 0.0) || !std::isfinite(total))
        throw DegenerateGeometry("need at least 3 valid point pairs, have " + std::to_string(used.size()));
    for (double& x : w) x /= total;

    Vec3 cs = Vec3::Zero(), ct = Vec3::Zero();
    for (std::size_t n = 0; n < used.size(); ++n) {
        cs += w[n] * source.points[used[n]];
        ct += w[n] * target.points[used[n]];
    }
    Mat3 h = Mat3::Zero();
    for (std::size_t n = 0; n < used.size(); ++n)
        h += w[n] * (source.points[used[n]] - cs) * (target.points[used[n]] - ct).transpose();

    const Svd3 s = svd3(h);
    const double largest = s.singular[0];
    if (!(largest > 0.0) ||
        (s.singular[1] < kCollinearTolerance * largest && s.singular[2] < kCollinearTolerance * largest))
        throw DegenerateGeometry("points are collinear; rotation about their axis is unobservable");

    Mat3 d = Mat3::Identity();
    d(2, 2) = (s.v * s.u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;

    AlignmentResult out;
    out.transform.rotation = s.v * d * s.u.transpose();
    out.transform.translation = ct - out.transform.rotation * cs;
    out.condition = s.singular[2] / largest;
    out.pairs = used.size();

    double sq = 0.0;
    for (std::size_t n = 0; n < used.size(); ++n)
        sq += w[n] * (apply(out.transform, source.points[used[n]]) - target.points[used[n]]).squaredNorm();
    out.residual_rms = std::sqrt(sq);
    return out;
}

/// Convenience overload for unweighted point lists.
inline AlignmentResult estimate_rigid(const std::vector<Vec3>& source, const std::vector<Vec3>& target) {
    PointCloud a{source, std::vector<double>(source.size(), 1.0)};
    PointCloud b{target, std::vector<double>(target.size(), 1.0)};
    return estimate_rigid(a, b);
}

} // namespace spaer
