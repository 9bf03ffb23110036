#pragma once

#include "spaer/diffeo.hpp"
#include "spaer/eqfeatures.hpp"
#include "spaer/errors.hpp"
#include "spaer/geometry.hpp"
#include "spaer/motion.hpp"
#include "spaer/rng.hpp"
#include "spaer/svd3.hpp"
#include "spaer/volume.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace spaer {

struct SimConfig {
    std::uint64_t seed = 0;
    int size = 64;
    double spacing_mm = kDefaultSpacingMm;
    int frames = 20;
    double t_max_mm = 10.0;
    double r_max_deg = 5.0;
    double noise_sigma = 0.0;
    double contrast_drift = 0.0;
    double distortion_mm = 0.0;

    void validate() const {
        if (size < 16) throw ConfigError("size must be >= 16");
        if (!(spacing_mm > 0.0) || !std::isfinite(spacing_mm)) throw ConfigError("spacing_mm must be > 0");
        if (frames < 2) throw ConfigError("frames must be >= 2");
        if (!(t_max_mm >= 0.0) || !std::isfinite(t_max_mm)) throw ConfigError("t_max_mm must be >= 0");
        if (!(r_max_deg >= 0.0) || !std::isfinite(r_max_deg)) throw ConfigError("r_max_deg must be >= 0");
        if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("noise_sigma must be >= 0");
        if (!(contrast_drift >= 0.0 && contrast_drift <= 1.0)) throw ConfigError("contrast_drift must lie in [0, 1]");
        if (!(distortion_mm >= 0.0) || !std::isfinite(distortion_mm)) throw ConfigError("distortion_mm must be >= 0");
    }

    [[nodiscard]] Grid grid() const { return Grid::centered(size, spacing_mm); }
};

// Stream labels for Rng::derived, one per independent random source.
namespace sim_stream {
inline constexpr std::uint64_t kPhantom = 1;
inline constexpr std::uint64_t kTrajectory = 2;
inline constexpr std::uint64_t kDistortion = 1000;
inline constexpr std::uint64_t kNoise = 100000;
} // namespace sim_stream

/// Uniformly distributed rotation (normalized Gaussian quaternion).
inline Mat3 random_rotation(Rng& rng) {
    Quaternion q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    const double n = std::sqrt(q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z);
    q = {q.w / n, q.x / n, q.y / n, q.z / n};
    return to_matrix(q);
}

/// Smallest singular value of a point cloud after removing its mean (valid points only).
inline double cloud_spread(const PointCloud& cloud) {
    Vec3 mean = Vec3::Zero();
    std::size_t n = 0;
    for (std::size_t k = 0; k < cloud.size(); ++k)
        if (cloud.valid(k)) {
            mean += cloud.points[k];
            ++n;
        }
    if (n < 3) return 0.0;
    mean /= static_cast<double>(n);
    Mat3 scatter = Mat3::Zero();
    for (std::size_t k = 0; k < cloud.size(); ++k)
        if (cloud.valid(k)) scatter += (cloud.points[k] - mean) * (cloud.points[k] - mean).transpose();
    return std::sqrt(std::max(0.0, svd3(scatter).singular[2]));
}

inline constexpr double kMinPhantomSpreadMm = 1.0;

namespace detail {

inline double smoothstep(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

struct Blob {
    Vec3 center;
    double sigma;
    double amplitude;
};

inline Volume draw_phantom(const Grid& g, Rng& rng) {
    const double extent = g.half_extent() * 2.0;
    const Vec3 semi(rng.uniform(0.175, 0.225) * extent, rng.uniform(0.175, 0.225) * extent,
                    rng.uniform(0.175, 0.225) * extent);
    const Mat3 orient = random_rotation(rng);
    const double edge = 1.5 * g.spacing.minCoeff();
    const double a_min = semi.minCoeff();

    // Dark cavities and bright blobs of comparable weight keep the channel
    // centroids apart; weak contrast collapses them onto the head center.
    std::vector<Blob> blobs(static_cast<std::size_t>(rng.uniform_int(3, 6)));
    for (auto& b : blobs) {
        Vec3 u;
        do {
            u = Vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
        } while (u.norm() > 1.0);
        b.center = orient * semi.cwiseProduct(0.5 * u);
        b.sigma = rng.uniform(0.2, 0.4) * a_min;
        b.amplitude = rng.uniform() < 0.5 ? -rng.uniform(0.8, 1.5) : rng.uniform(0.3, 0.65);
    }

    Volume vol(g);
    parallel_for(static_cast<std::size_t>(g.dims[2]), [&](std::size_t kk) {
        const int k = static_cast<int>(kk);
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i) {
                const Vec3 p = g.world(i, j, k);
                const double r = (orient.transpose() * p).cwiseQuotient(semi).norm();
                if (r >= 1.0) continue;
                const double mask = smoothstep((1.0 - r) * a_min / edge);
                double v = 1.0;
                for (const auto& b : blobs)
                    v += b.amplitude * std::exp(-(p - b.center).squaredNorm() / (2.0 * b.sigma * b.sigma));
                // Saturate bright blobs below 1.5x tissue so normalized tissue stays near 0.67,
                // clear of the 0.5 mask threshold.
                if (v > 1.0) v = 1.0 + 0.5 * std::tanh(2.0 * (v - 1.0));
                vol.at(i, j, k) = mask * std::max(v, 0.0);
            }
    });
    return normalize_intensity(vol);
}

} // namespace detail

/// Smooth ellipsoidal head with interior blobs, zero background, intensities in [0, 1].
/// Draws are repeated until the default-bank point cloud spans three dimensions.
inline Volume make_phantom(const SimConfig& cfg) {
    cfg.validate();
    const Grid g = cfg.grid();
    Rng rng = Rng::derived(cfg.seed, sim_stream::kPhantom);
    const FilterBank bank = FilterBank::with_unit_gains(default_channels());
    for (int attempt = 0;; ++attempt) {
        Volume vol = detail::draw_phantom(g, rng);
        if (attempt >= 64 || cloud_spread(representation(bank, vol)) > kMinPhantomSpreadMm) return vol;
    }
}

/// Bounded smooth random walk: 6 cumulative Gaussian paths (3 translations in
/// mm, 3 intrinsic XYZ Euler angles in degrees), moving average of width 3,
/// shifted so frame 0 is the identity, and scaled so the largest translation
/// component is exactly t_max_mm and the largest angle exactly r_max_deg.
inline std::vector<RigidTransform> make_trajectory(const SimConfig& cfg) {
    cfg.validate();
    const auto n = static_cast<std::size_t>(cfg.frames);
    Rng rng = Rng::derived(cfg.seed, sim_stream::kTrajectory);
    std::vector<std::array<double, 6>> walk(n);
    walk[0].fill(0.0);
    for (std::size_t t = 1; t < n; ++t)
        for (int a = 0; a < 6; ++a) walk[t][a] = walk[t - 1][a] + rng.normal();

    std::vector<std::array<double, 6>> path(n);
    for (std::size_t t = 0; t < n; ++t)
        for (int a = 0; a < 6; ++a) {
            const std::size_t lo = t == 0 ? 0 : t - 1;
            const std::size_t hi = std::min(n - 1, t + 1);
            double s = 0.0;
            for (std::size_t u = lo; u <= hi; ++u) s += walk[u][a];
            path[t][a] = s / static_cast<double>(hi - lo + 1);
        }
    const auto origin = path[0];
    for (auto& p : path)
        for (int a = 0; a < 6; ++a) p[a] -= origin[a];

    auto rescale = [&](int first, double bound) {
        double m = 0.0;
        std::size_t arg_t = 0;
        int arg_a = first;
        for (std::size_t t = 0; t < n; ++t)
            for (int a = first; a < first + 3; ++a)
                if (std::abs(path[t][a]) > m) {
                    m = std::abs(path[t][a]);
                    arg_t = t;
                    arg_a = a;
                }
        for (auto& p : path)
            for (int a = first; a < first + 3; ++a) p[a] = m > 0.0 ? p[a] * (bound / m) : 0.0;
        if (m > 0.0) path[arg_t][arg_a] = std::copysign(bound, path[arg_t][arg_a]);
    };
    rescale(0, cfg.t_max_mm);
    rescale(3, cfg.r_max_deg);

    std::vector<RigidTransform> traj;
    traj.reserve(n);
    for (const auto& p : path) {
        RigidTransform q;
        q.rotation = rotation_from_euler(p[3], p[4], p[5], EulerOrder::XYZ);
        q.translation = Vec3(p[0], p[1], p[2]);
        traj.push_back(q);
    }
    traj[0] = RigidTransform::identity();
    return traj;
}

struct SyntheticSequence {
    std::vector<Volume> frames;
    MotionSequence truth;
};

/// frame_t = resample_rigid(phantom, inverse(traj[t])): the object is moved by
/// traj[t]. Artifacts follow in this order: distortion by a seeded smooth SVF
/// (frames t >= 1), the contrast factor 1 + c sin(2 pi t / T), then additive
/// Gaussian noise.
inline SyntheticSequence synthesize(const Volume& phantom, const std::vector<RigidTransform>& traj, const SimConfig& cfg) {
    cfg.validate();
    if (traj.empty()) throw LengthMismatch("trajectory is empty");
    const std::size_t n = traj.size();
    SyntheticSequence out;
    out.frames.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
        Volume f = resample_rigid(phantom, inverse(traj[t]));
        if (cfg.distortion_mm > 0.0 && t > 0) {
            const std::uint64_t s = Rng::derived(cfg.seed, sim_stream::kDistortion + t).next();
            f = warp(f, exponentiate(random_smooth_velocity(f.grid(), cfg.distortion_mm, s)));
        }
        if (cfg.contrast_drift > 0.0) {
            const double factor =
                1.0 + cfg.contrast_drift * std::sin(2.0 * kPi * static_cast<double>(t) / static_cast<double>(n));
            for (double& v : f.data()) v *= factor;
        }
        if (cfg.noise_sigma > 0.0) {
            Rng rng = Rng::derived(cfg.seed, sim_stream::kNoise + t);
            for (double& v : f.data()) v += cfg.noise_sigma * rng.normal();
        }
        out.frames[t] = std::move(f);
    }
    out.truth = MotionSequence::from_accumulated(traj);
    return out;
}

/// make_phantom + make_trajectory + synthesize.
inline SyntheticSequence simulate(const SimConfig& cfg) {
    return synthesize(make_phantom(cfg), make_trajectory(cfg), cfg);
}

} // namespace spaer
