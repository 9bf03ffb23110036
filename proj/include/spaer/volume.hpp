#pragma once

#include "spaer/errors.hpp"
#include "spaer/geometry.hpp"
#include "spaer/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace spaer {

using Dims = std::array<int, 3>;

inline constexpr double kDefaultSpacingMm = 3.0;

/// Voxel lattice in world coordinates. `origin` is the world position (mm) of
/// the center of voxel (0,0,0); voxel (i,j,k) sits at origin + spacing * (i,j,k).
/// Storage order is x-fastest.
struct Grid {
    Dims dims{0, 0, 0};
    Vec3 spacing = Vec3::Constant(kDefaultSpacingMm);
    Vec3 origin = Vec3::Zero();

    /// Cubic-or-not grid whose geometric center is the world origin.
    static Grid centered(const Dims& dims, const Vec3& spacing) {
        Grid g{dims, spacing, Vec3::Zero()};
        for (int a = 0; a < 3; ++a) g.origin[a] = -0.5 * (dims[a] - 1) * spacing[a];
        return g;
    }
    static Grid centered(int n, double spacing_mm = kDefaultSpacingMm) {
        return centered(Dims{n, n, n}, Vec3::Constant(spacing_mm));
    }

    [[nodiscard]] std::size_t size() const {
        return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
               static_cast<std::size_t>(dims[2]);
    }
    [[nodiscard]] std::size_t index(int i, int j, int k) const {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(dims[0]) *
                   (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(k));
    }
    [[nodiscard]] Vec3 world(int i, int j, int k) const {
        return origin + spacing.cwiseProduct(Vec3(i, j, k));
    }
    [[nodiscard]] Vec3 world(std::size_t flat) const {
        const auto nx = static_cast<std::size_t>(dims[0]);
        const auto ny = static_cast<std::size_t>(dims[1]);
        return world(static_cast<int>(flat % nx), static_cast<int>((flat / nx) % ny), static_cast<int>(flat / (nx * ny)));
    }
    /// Continuous voxel coordinates of a world point.
    [[nodiscard]] Vec3 to_index(const Vec3& p) const { return (p - origin).cwiseQuotient(spacing); }
    [[nodiscard]] Vec3 center() const {
        return origin + 0.5 * spacing.cwiseProduct(Vec3(dims[0] - 1, dims[1] - 1, dims[2] - 1));
    }
    /// Half of the largest physical side length.
    [[nodiscard]] double half_extent() const {
        double e = 0.0;
        for (int a = 0; a < 3; ++a) e = std::max(e, 0.5 * dims[a] * spacing[a]);
        return e;
    }
    [[nodiscard]] double voxel_volume() const { return spacing.prod(); }
    [[nodiscard]] bool contains_index(int i, int j, int k) const {
        return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] && k < dims[2];
    }
    /// Distance, in voxels, from (i,j,k) to the nearest grid face.
    [[nodiscard]] int boundary_distance(int i, int j, int k) const {
        return std::min({i, j, k, dims[0] - 1 - i, dims[1] - 1 - j, dims[2] - 1 - k});
    }

    void validate() const {
        for (int a = 0; a < 3; ++a) {
            if (dims[a] <= 0) throw ShapeMismatch("grid dimensions must be positive");
            if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) throw ShapeMismatch("grid spacing must be positive");
            if (!std::isfinite(origin[a])) throw ShapeMismatch("grid origin must be finite");
        }
    }

    friend bool operator==(const Grid& a, const Grid& b) {
        return a.dims == b.dims && a.spacing == b.spacing && a.origin == b.origin;
    }
};

/// A 3D scalar image on a Grid.
class Volume {
public:
    Volume() = default;

    explicit Volume(const Grid& grid, double fill = 0.0) : grid_(grid) {
        grid_.validate();
        data_.assign(grid_.size(), fill);
    }

    Volume(const Grid& grid, std::vector<double> data) : grid_(grid), data_(std::move(data)) {
        grid_.validate();
        if (data_.size() != grid_.size()) throw ShapeMismatch("volume data length does not match grid dimensions");
    }

    [[nodiscard]] const Grid& grid() const { return grid_; }
    [[nodiscard]] const Dims& dims() const { return grid_.dims; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }

    [[nodiscard]] std::span<const double> data() const { return data_; }
    [[nodiscard]] std::span<double> data() { return data_; }
    [[nodiscard]] const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(int i, int j, int k) { return data_[grid_.index(i, j, k)]; }
    [[nodiscard]] double at(int i, int j, int k) const { return data_[grid_.index(i, j, k)]; }

    friend bool operator==(const Volume& a, const Volume& b) { return a.grid_ == b.grid_ && a.data_ == b.data_; }

private:
    Grid grid_;
    std::vector<double> data_;
};

inline void require_same_grid(const Grid& a, const Grid& b, const char* what) {
    if (!(a == b)) throw GridMismatch(std::string(what) + ": grids differ in dims, spacing or origin");
}

/// Continuous indices this close to a lattice point are treated as exactly on it.
/// Keeps exact 90-degree rotations and integer shifts free of interpolation error.
inline constexpr double kLatticeSnap = 1e-9;

/// Trilinear interpolation at continuous voxel coordinates with zero padding
/// outside the grid.
inline double sample_index(const Volume& vol, Vec3 c) {
    const Dims& n = vol.dims();
    for (int a = 0; a < 3; ++a) {
        if (!std::isfinite(c[a]) || c[a] <= -1.0 || c[a] >= n[a]) return 0.0;
        const double r = std::nearbyint(c[a]);
        if (std::abs(c[a] - r) < kLatticeSnap) c[a] = r;
    }
    const int i0 = static_cast<int>(std::floor(c[0]));
    const int j0 = static_cast<int>(std::floor(c[1]));
    const int k0 = static_cast<int>(std::floor(c[2]));
    const double fx = c[0] - i0, fy = c[1] - j0, fz = c[2] - k0;
    const double wx[2] = {1.0 - fx, fx};
    const double wy[2] = {1.0 - fy, fy};
    const double wz[2] = {1.0 - fz, fz};
    const Grid& g = vol.grid();
    double acc = 0.0;
    for (int dz = 0; dz < 2; ++dz) {
        const int k = k0 + dz;
        if (k < 0 || k >= n[2] || wz[dz] == 0.0) continue;
        for (int dy = 0; dy < 2; ++dy) {
            const int j = j0 + dy;
            if (j < 0 || j >= n[1] || wy[dy] == 0.0) continue;
            for (int dx = 0; dx < 2; ++dx) {
                const int i = i0 + dx;
                if (i < 0 || i >= n[0] || wx[dx] == 0.0) continue;
                acc += wx[dx] * wy[dy] * wz[dz] * vol[g.index(i, j, k)];
            }
        }
    }
    return acc;
}

/// Trilinear interpolation at a world point (mm); 0 outside the grid.
inline double trilinear_sample(const Volume& vol, const Vec3& p) { return sample_index(vol, vol.grid().to_index(p)); }

/// Pull-back resampling, out(p) = vol(q(p)), on the same grid. If q maps
/// fixed-frame points to moving-frame points, the result is the moving volume
/// aligned to the fixed frame.
inline Volume resample_rigid(const Volume& vol, const RigidTransform& q) {
    const Grid& g = vol.grid();
    // Index-space form of the map: c = A * ijk + b.
    const Mat3 a = g.spacing.cwiseInverse().asDiagonal() * q.rotation * g.spacing.asDiagonal();
    const Vec3 b = (q.rotation * g.origin + q.translation - g.origin).cwiseQuotient(g.spacing);
    Volume out(g);
    const Dims n = g.dims;
    parallel_for(static_cast<std::size_t>(n[2]), [&](std::size_t kk) {
        const int k = static_cast<int>(kk);
        for (int j = 0; j < n[1]; ++j) {
            for (int i = 0; i < n[0]; ++i) {
                const Vec3 c = a * Vec3(i, j, k) + b;
                out[g.index(i, j, k)] = sample_index(vol, c);
            }
        }
    });
    return out;
}

/// Linear rescale to [0, 1]; constant volumes map to zeros.
inline Volume normalize_intensity(const Volume& vol) {
    Volume out(vol.grid());
    if (vol.size() == 0) return out;
    const auto [lo, hi] = std::minmax_element(vol.data().begin(), vol.data().end());
    const double min = *lo, range = *hi - *lo;
    if (!(range > 0.0)) return out;
    for (std::size_t i = 0; i < vol.size(); ++i) out[i] = (vol[i] - min) / range;
    return out;
}

/// Mean squared voxel difference.
inline double ssd(const Volume& a, const Volume& b) {
    require_same_grid(a.grid(), b.grid(), "ssd");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return a.size() ? acc / static_cast<double>(a.size()) : 0.0;
}

/// Pearson correlation of voxel values. Returns 0 when either volume is constant.
inline double ncc(const Volume& a, const Volume& b) {
    require_same_grid(a.grid(), b.grid(), "ncc");
    const auto n = static_cast<double>(a.size());
    if (a.size() == 0) return 0.0;
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (!(saa > 0.0) || !(sbb > 0.0)) return 0.0;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// Dice overlap of the masks {v > threshold_fraction * max(v)}. Two empty masks give 1.
inline double dice(const Volume& a, const Volume& b, double threshold_fraction) {
    require_same_grid(a.grid(), b.grid(), "dice");
    if (!(threshold_fraction > 0.0 && threshold_fraction < 1.0))
        throw std::invalid_argument("dice threshold_fraction must lie in (0, 1)");
    const auto max_of = [](const Volume& v) {
        return v.size() ? *std::max_element(v.data().begin(), v.data().end()) : 0.0;
    };
    const double ta = threshold_fraction * max_of(a);
    const double tb = threshold_fraction * max_of(b);
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool in_a = a[i] > ta;
        const bool in_b = b[i] > tb;
        na += in_a;
        nb += in_b;
        both += in_a && in_b;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

} // namespace spaer
