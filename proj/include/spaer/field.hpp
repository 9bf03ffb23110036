#pragma once

#include "spaer/volume.hpp"

#include <cmath>
#include <vector>

namespace spaer {

/// Three-component vector per voxel (mm), on a Grid.
class VectorField {
public:
    VectorField() = default;
    explicit VectorField(const Grid& grid) : grid_(grid) {
        grid_.validate();
        values_.assign(grid_.size(), Vec3::Zero());
    }
    VectorField(const Grid& grid, std::vector<Vec3> values) : grid_(grid), values_(std::move(values)) {
        grid_.validate();
        if (values_.size() != grid_.size()) throw ShapeMismatch("field data length does not match grid dimensions");
    }

    [[nodiscard]] const Grid& grid() const { return grid_; }
    [[nodiscard]] const Dims& dims() const { return grid_.dims; }
    [[nodiscard]] std::size_t size() const { return values_.size(); }

    Vec3& operator[](std::size_t i) { return values_[i]; }
    const Vec3& operator[](std::size_t i) const { return values_[i]; }
    Vec3& at(int i, int j, int k) { return values_[grid_.index(i, j, k)]; }
    [[nodiscard]] const Vec3& at(int i, int j, int k) const { return values_[grid_.index(i, j, k)]; }
    [[nodiscard]] const std::vector<Vec3>& values() const { return values_; }
    std::vector<Vec3>& values() { return values_; }

    /// Largest vector norm over the grid.
    [[nodiscard]] double max_norm() const {
        double m = 0.0;
        for (const auto& v : values_) m = std::max(m, v.norm());
        return m;
    }

private:
    Grid grid_;
    std::vector<Vec3> values_;
};

/// Generator of a diffeomorphism (stationary velocity, mm).
class VelocityField : public VectorField {
public:
    using VectorField::VectorField;
};

/// Displacement u of the map p -> p + u(p), mm. Zero everywhere is the identity.
class DeformationField : public VectorField {
public:
    using VectorField::VectorField;
};

/// Trilinear interpolation of a vector field at continuous voxel coordinates; zero outside.
inline Vec3 sample_index(const VectorField& f, Vec3 c) {
    const Dims& n = f.dims();
    for (int a = 0; a < 3; ++a) {
        if (!std::isfinite(c[a]) || c[a] <= -1.0 || c[a] >= n[a]) return Vec3::Zero();
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
    const Grid& g = f.grid();
    Vec3 acc = Vec3::Zero();
    for (int dz = 0; dz < 2; ++dz) {
        const int k = k0 + dz;
        if (k < 0 || k >= n[2] || wz[dz] == 0.0) continue;
        for (int dy = 0; dy < 2; ++dy) {
            const int j = j0 + dy;
            if (j < 0 || j >= n[1] || wy[dy] == 0.0) continue;
            for (int dx = 0; dx < 2; ++dx) {
                const int i = i0 + dx;
                if (i < 0 || i >= n[0] || wx[dx] == 0.0) continue;
                acc += (wx[dx] * wy[dy] * wz[dz]) * f[g.index(i, j, k)];
            }
        }
    }
    return acc;
}

} // namespace spaer
