#pragma once

#include "spaer/eqfeatures.hpp"
#include "spaer/errors.hpp"
#include "spaer/field.hpp"
#include "spaer/parallel.hpp"
#include "spaer/rng.hpp"
#include "spaer/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace spaer {

inline constexpr int kVelocityMargin = 2;

/// Zeroes the field on a boundary shell `margin` voxels thick.
inline void enforce_margin(VectorField& f, int margin = kVelocityMargin) {
    const Grid& g = f.grid();
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i)
                if (g.boundary_distance(i, j, k) < margin) f.at(i, j, k) = Vec3::Zero();
}

/// (a o b)(p) = p + b(p) + a(p + b(p)), i.e. displacement b(p) + a_interp(p + b(p)).
inline DeformationField compose_deformations(const DeformationField& a, const DeformationField& b) {
    require_same_grid(a.grid(), b.grid(), "compose_deformations");
    const Grid& g = a.grid();
    DeformationField out(g);
    parallel_for(static_cast<std::size_t>(g.dims[2]), [&](std::size_t kk) {
        const int k = static_cast<int>(kk);
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i) {
                const std::size_t idx = g.index(i, j, k);
                const Vec3 c = Vec3(i, j, k) + b[idx].cwiseQuotient(g.spacing);
                out[idx] = b[idx] + sample_index(a, c);
            }
    });
    return out;
}

/// exp(v) by scaling and squaring: start from v / 2^steps and self-compose `steps` times.
inline DeformationField exponentiate(const VelocityField& v, int steps = 6) {
    if (steps < 1) throw std::invalid_argument("exponentiate needs at least one squaring step");
    const double scale = std::ldexp(1.0, -steps);
    DeformationField phi(v.grid());
    for (std::size_t i = 0; i < v.size(); ++i) phi[i] = v[i] * scale;
    for (int s = 0; s < steps; ++s) phi = compose_deformations(phi, phi);
    return phi;
}

/// out(p) = vol(p + phi(p)).
inline Volume warp(const Volume& vol, const DeformationField& phi) {
    require_same_grid(vol.grid(), phi.grid(), "warp");
    const Grid& g = vol.grid();
    Volume out(g);
    parallel_for(static_cast<std::size_t>(g.dims[2]), [&](std::size_t kk) {
        const int k = static_cast<int>(kk);
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i) {
                const std::size_t idx = g.index(i, j, k);
                out[idx] = sample_index(vol, Vec3(i, j, k) + phi[idx].cwiseQuotient(g.spacing));
            }
    });
    return out;
}

/// det(I + du/dx) by central differences (one-sided on the boundary).
inline Volume jacobian_determinant(const DeformationField& phi) {
    const Grid& g = phi.grid();
    Volume out(g);
    parallel_for(static_cast<std::size_t>(g.dims[2]), [&](std::size_t kk) {
        const int k = static_cast<int>(kk);
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i) {
                Mat3 jac = Mat3::Identity();
                const int idx[3] = {i, j, k};
                for (int a = 0; a < 3; ++a) {
                    int lo[3] = {i, j, k}, hi[3] = {i, j, k};
                    lo[a] = std::max(0, idx[a] - 1);
                    hi[a] = std::min(g.dims[a] - 1, idx[a] + 1);
                    const int span = hi[a] - lo[a];
                    if (span == 0) continue;
                    const Vec3 du = (phi.at(hi[0], hi[1], hi[2]) - phi.at(lo[0], lo[1], lo[2])) / (span * g.spacing[a]);
                    jac.col(a) += du;
                }
                out.at(i, j, k) = jac.determinant();
            }
    });
    return out;
}

/// Smallest Jacobian determinant over voxels at least `margin` voxels inside the grid.
inline double min_interior_jacobian(const DeformationField& phi, int margin = kVelocityMargin) {
    const Volume det = jacobian_determinant(phi);
    const Grid& g = phi.grid();
    double m = std::numeric_limits<double>::infinity();
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i)
                if (g.boundary_distance(i, j, k) >= margin) m = std::min(m, det.at(i, j, k));
    return m;
}

/// Componentwise Gaussian smoothing (zero padding).
inline VectorField smooth_field(const VectorField& f, double sigma_mm) {
    const Grid& g = f.grid();
    VectorField out(g);
    std::vector<double> a(f.size()), b(f.size());
    for (int c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < f.size(); ++i) a[i] = f[i][c];
        for (int axis = 0; axis < 3; ++axis) {
            detail::convolve_axis(a, b, g.dims, axis, gaussian_kernel(sigma_mm, g.spacing[axis]));
            std::swap(a, b);
        }
        for (std::size_t i = 0; i < f.size(); ++i) out[i][c] = a[i];
    }
    return out;
}

/// mean over voxels of |grad v|^2 (forward differences in world units).
inline double velocity_regularizer(const VectorField& v) {
    const Grid& g = v.grid();
    double acc = 0.0;
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i) {
                const Vec3& c = v.at(i, j, k);
                if (i + 1 < g.dims[0]) acc += (v.at(i + 1, j, k) - c).squaredNorm() / (g.spacing[0] * g.spacing[0]);
                if (j + 1 < g.dims[1]) acc += (v.at(i, j + 1, k) - c).squaredNorm() / (g.spacing[1] * g.spacing[1]);
                if (k + 1 < g.dims[2]) acc += (v.at(i, j, k + 1) - c).squaredNorm() / (g.spacing[2] * g.spacing[2]);
            }
    return v.size() ? acc / static_cast<double>(v.size()) : 0.0;
}

/// Gradient of velocity_regularizer with respect to every voxel of v.
inline VectorField velocity_regularizer_gradient(const VectorField& v) {
    const Grid& g = v.grid();
    VectorField out(g);
    const double scale = 2.0 / static_cast<double>(v.size());
    parallel_for(static_cast<std::size_t>(g.dims[2]), [&](std::size_t kk) {
        const int k = static_cast<int>(kk);
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i) {
                const Vec3& c = v.at(i, j, k);
                Vec3 acc = Vec3::Zero();
                const int idx[3] = {i, j, k};
                for (int a = 0; a < 3; ++a) {
                    const double h2 = g.spacing[a] * g.spacing[a];
                    int prev[3] = {i, j, k}, next[3] = {i, j, k};
                    prev[a] -= 1;
                    next[a] += 1;
                    if (idx[a] > 0) acc += (c - v.at(prev[0], prev[1], prev[2])) / h2;
                    if (idx[a] + 1 < g.dims[a]) acc -= (v.at(next[0], next[1], next[2]) - c) / h2;
                }
                out.at(i, j, k) = scale * acc;
            }
    });
    return out;
}

/// Central-difference image gradient in world units (zero outside the grid).
inline VectorField image_gradient(const Volume& vol) {
    const Grid& g = vol.grid();
    VectorField out(g);
    const Vec3 h = 0.5 * g.spacing.cwiseInverse();
    parallel_for(static_cast<std::size_t>(g.dims[2]), [&](std::size_t kk) {
        const int k = static_cast<int>(kk);
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i)
                out.at(i, j, k) = Vec3((detail::value_or_zero(vol, i + 1, j, k) - detail::value_or_zero(vol, i - 1, j, k)) * h[0],
                                       (detail::value_or_zero(vol, i, j + 1, k) - detail::value_or_zero(vol, i, j - 1, k)) * h[1],
                                       (detail::value_or_zero(vol, i, j, k + 1) - detail::value_or_zero(vol, i, j, k - 1)) * h[2]);
    });
    return out;
}

struct SvfConfig {
    int iterations = 100;
    double step_size_mm = 1.0;   ///< largest per-iteration change of v (max norm)
    double smooth_sigma_mm = 4.5; ///< update smoothing
    double reg_weight = 0.01;    ///< ssd of [0, 1] images is ~1e-4, so larger weights freeze v
    int steps = 6;               ///< scaling-and-squaring steps
    int max_halvings = 10;       ///< backtracking budget per iteration
};

struct SvfResult {
    VelocityField velocity;
    std::vector<double> energy; ///< E at v = 0, then after every accepted update; non-increasing
};

/// E(v) = ssd(warp(moving, exp(v)), fixed) + reg_weight * mean |grad v|^2.
inline double svf_energy(const Volume& moving, const Volume& fixed, const VelocityField& v, const SvfConfig& cfg) {
    return ssd(warp(moving, exponentiate(v, cfg.steps)), fixed) + cfg.reg_weight * velocity_regularizer(v);
}

/// Stationary-velocity registration of `moving` onto `fixed` by smoothed
/// gradient descent with backtracking. The data gradient is the usual
/// demons-style force (W - F) * grad(moving) at the warped position, which is
/// exact for the displacement and a first-order approximation for v. Every
/// accepted step strictly lowers E, so the recorded trace never increases and
/// E(result) <= E(0).
inline SvfResult register_svf(const Volume& moving, const Volume& fixed, const SvfConfig& cfg = {}) {
    require_same_grid(moving.grid(), fixed.grid(), "register_svf");
    const Grid& g = moving.grid();
    const auto n = static_cast<double>(g.size());
    const VectorField grad_moving = image_gradient(moving);

    SvfResult result{VelocityField(g), {}};
    VelocityField& v = result.velocity;
    DeformationField phi = exponentiate(v, cfg.steps);
    Volume warped = warp(moving, phi);
    double energy = ssd(warped, fixed) + cfg.reg_weight * velocity_regularizer(v);
    if (!std::isfinite(energy)) throw NonFiniteEnergy("registration energy is not finite at v = 0");
    result.energy.push_back(energy);

    double step = cfg.step_size_mm;
    for (int it = 0; it < cfg.iterations; ++it) {
        VectorField direction = velocity_regularizer_gradient(v);
        for (std::size_t i = 0; i < direction.size(); ++i) direction[i] *= cfg.reg_weight;
        parallel_for(static_cast<std::size_t>(g.dims[2]), [&](std::size_t kk) {
            const int k = static_cast<int>(kk);
            for (int j = 0; j < g.dims[1]; ++j)
                for (int i = 0; i < g.dims[0]; ++i) {
                    const std::size_t idx = g.index(i, j, k);
                    const double r = warped[idx] - fixed[idx];
                    if (r == 0.0) continue;
                    const Vec3 c = Vec3(i, j, k) + phi[idx].cwiseQuotient(g.spacing);
                    direction[idx] += (2.0 * r / n) * sample_index(grad_moving, c);
                }
        });
        direction = smooth_field(direction, cfg.smooth_sigma_mm);
        enforce_margin(direction);
        const double m = direction.max_norm();
        if (!(m > 0.0)) break;
        if (!std::isfinite(m)) throw NonFiniteEnergy("registration gradient is not finite");
        const double to_unit = -1.0 / m;

        bool accepted = false;
        for (int h = 0; h <= cfg.max_halvings; ++h) {
            VelocityField trial = v;
            for (std::size_t i = 0; i < trial.size(); ++i) trial[i] += (step * to_unit) * direction[i];
            DeformationField trial_phi = exponentiate(trial, cfg.steps);
            Volume trial_warped = warp(moving, trial_phi);
            const double e = ssd(trial_warped, fixed) + cfg.reg_weight * velocity_regularizer(trial);
            if (std::isnan(e)) throw NonFiniteEnergy("registration energy became NaN");
            if (e < energy) {
                v = std::move(trial);
                phi = std::move(trial_phi);
                warped = std::move(trial_warped);
                energy = e;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;
        result.energy.push_back(energy);
        step = std::min(step * 1.5, cfg.step_size_mm);
    }
    return result;
}

/// Seeded smooth random velocity with max norm `magnitude_mm` and a zero boundary margin.
inline VelocityField random_smooth_velocity(const Grid& grid, double magnitude_mm, std::uint64_t seed,
                                            double smooth_sigma_mm = 12.0) {
    VelocityField v(grid);
    if (magnitude_mm <= 0.0) return v;
    Rng rng(seed);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = Vec3(rng.normal(), rng.normal(), rng.normal());
    VectorField smooth = smooth_field(v, smooth_sigma_mm);
    enforce_margin(smooth);
    const double m = smooth.max_norm();
    VelocityField out(grid);
    if (!(m > 0.0)) return out;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = smooth[i] * (magnitude_mm / m);
    return out;
}

} // namespace spaer
