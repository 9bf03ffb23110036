#pragma once

#include "spaer/errors.hpp"
#include "spaer/parallel.hpp"
#include "spaer/volume.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace spaer {

/// Isotropic base operators. Each commutes with rotations of the image in the
/// continuum, so every channel built from them is rotation-equivariant.
enum class ChannelType { smoothed_intensity, gradient_magnitude, laplacian_magnitude, intensity_power };

inline std::string_view to_string(ChannelType t) {
    switch (t) {
        case ChannelType::smoothed_intensity: return "smoothed_intensity";
        case ChannelType::gradient_magnitude: return "gradient_magnitude";
        case ChannelType::laplacian_magnitude: return "laplacian_magnitude";
        case ChannelType::intensity_power: return "intensity_power";
    }
    return "unknown";
}

inline ChannelType channel_type_from_string(std::string_view s) {
    for (auto t : {ChannelType::smoothed_intensity, ChannelType::gradient_magnitude, ChannelType::laplacian_magnitude,
                   ChannelType::intensity_power})
        if (to_string(t) == s) return t;
    throw InvalidChannelSpec("unknown channel type '" + std::string(s) + "'");
}

/// Channel response is (base response)^power. For intensity_power the base is
/// the smoothed intensity; for the others `power` is an extra sharpening exponent.
struct ChannelSpec {
    ChannelType type = ChannelType::smoothed_intensity;
    double sigma_mm = 3.0;
    double power = 1.0;

    void validate() const {
        if (!(sigma_mm > 0.0) || !std::isfinite(sigma_mm)) throw InvalidChannelSpec("channel scale sigma must be > 0");
        if (!(power >= 1.0) || !std::isfinite(power)) throw InvalidChannelSpec("channel power must be >= 1");
    }
    friend bool operator==(const ChannelSpec&, const ChannelSpec&) = default;
};

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double inverse_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

/// K non-negative equivariant channels. Gains are stored unconstrained and
/// mapped through softplus, so the effective gains are always >= 0.
struct FilterBank {
    std::vector<ChannelSpec> channels;
    std::vector<double> raw_gains;

    [[nodiscard]] std::size_t size() const { return channels.size(); }
    [[nodiscard]] double gain(std::size_t k) const { return softplus(raw_gains[k]); }

    void validate() const {
        if (channels.empty()) throw InvalidChannelSpec("filter bank has no channels");
        if (channels.size() != raw_gains.size()) throw InvalidChannelSpec("one gain per channel required");
        for (const auto& c : channels) c.validate();
        for (double g : raw_gains)
            if (!std::isfinite(g)) throw InvalidChannelSpec("gain parameters must be finite");
    }

    /// Bank with all effective gains equal to `gain`.
    static FilterBank with_unit_gains(std::vector<ChannelSpec> channels, double gain = 1.0) {
        FilterBank b;
        b.raw_gains.assign(channels.size(), inverse_softplus(gain));
        b.channels = std::move(channels);
        return b;
    }
};

/// The four base operators at sigma 3 mm and 6 mm (8 channels), each repeated
/// with exponents scaled by {1, 1.5, 2.5, 4}: K = 32, token size 3K = 96.
inline std::vector<ChannelSpec> default_channels() {
    const ChannelType types[] = {ChannelType::smoothed_intensity, ChannelType::gradient_magnitude,
                                 ChannelType::laplacian_magnitude, ChannelType::intensity_power};
    const double base_power[] = {1.0, 1.0, 1.0, 2.0};
    std::vector<ChannelSpec> out;
    for (double m : {1.0, 1.5, 2.5, 4.0})
        for (double sigma : {3.0, 6.0})
            for (int t = 0; t < 4; ++t) out.push_back({types[t], sigma, base_power[t] * m});
    return out;
}

using ChannelStack = std::vector<Volume>;

/// K weighted spatial means. A point whose mass is 0 carries no information and
/// is skipped by the aligner.
struct PointCloud {
    std::vector<Vec3> points;
    std::vector<double> masses;

    [[nodiscard]] std::size_t size() const { return points.size(); }
    [[nodiscard]] bool valid(std::size_t k) const { return masses[k] > 0.0 && std::isfinite(masses[k]); }
    [[nodiscard]] std::size_t valid_count() const {
        std::size_t n = 0;
        for (std::size_t k = 0; k < size(); ++k) n += valid(k);
        return n;
    }
};

// ---------------------------------------------------------------------------
// Base operators

/// Sampled, unit-sum Gaussian with radius ceil(3 sigma / spacing).
inline std::vector<double> gaussian_kernel(double sigma_mm, double spacing_mm) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma_mm / spacing_mm));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double x = i * spacing_mm;
        k[static_cast<std::size_t>(i + radius)] = std::exp(-x * x / (2.0 * sigma_mm * sigma_mm));
        sum += k[static_cast<std::size_t>(i + radius)];
    }
    for (double& v : k) v /= sum;
    return k;
}

namespace detail {

// Zero-padded 1D convolution along `axis`, applied to every line of the grid.
inline void convolve_axis(const std::vector<double>& src, std::vector<double>& dst, const Dims& n, int axis,
                          const std::vector<double>& kernel) {
    const int radius = static_cast<int>(kernel.size() / 2);
    const std::size_t stride = axis == 0 ? 1 : axis == 1 ? static_cast<std::size_t>(n[0])
                                                         : static_cast<std::size_t>(n[0]) * n[1];
    const int len = n[axis];
    const int other_a = axis == 0 ? 1 : 0;
    const int other_b = axis == 2 ? 1 : 2;
    parallel_for(static_cast<std::size_t>(n[other_b]), [&](std::size_t b) {
        std::vector<double> line(static_cast<std::size_t>(len));
        for (int a = 0; a < n[other_a]; ++a) {
            int idx[3] = {0, 0, 0};
            idx[other_a] = a;
            idx[other_b] = static_cast<int>(b);
            const std::size_t base = static_cast<std::size_t>(idx[0]) +
                                     static_cast<std::size_t>(n[0]) * (static_cast<std::size_t>(idx[1]) +
                                                                       static_cast<std::size_t>(n[1]) * idx[2]);
            for (int i = 0; i < len; ++i) line[static_cast<std::size_t>(i)] = src[base + stride * i];
            for (int i = 0; i < len; ++i) {
                const int lo = std::max(-radius, -i);
                const int hi = std::min(radius, len - 1 - i);
                double acc = 0.0;
                for (int r = lo; r <= hi; ++r)
                    acc += kernel[static_cast<std::size_t>(r + radius)] * line[static_cast<std::size_t>(i + r)];
                dst[base + stride * i] = acc;
            }
        }
    });
}

} // namespace detail

/// Separable Gaussian smoothing with zero padding; sigma in mm.
inline Volume gaussian_smooth(const Volume& vol, double sigma_mm) {
    const Grid& g = vol.grid();
    std::vector<double> a(vol.values());
    std::vector<double> b(a.size());
    for (int axis = 0; axis < 3; ++axis) {
        detail::convolve_axis(a, b, g.dims, axis, gaussian_kernel(sigma_mm, g.spacing[axis]));
        std::swap(a, b);
    }
    return Volume(g, std::move(a));
}

namespace detail {
inline double value_or_zero(const Volume& v, int i, int j, int k) {
    return v.grid().contains_index(i, j, k) ? v.at(i, j, k) : 0.0;
}
} // namespace detail

/// |grad f| by central differences in world units, zero outside the grid.
inline Volume gradient_magnitude(const Volume& vol) {
    const Grid& g = vol.grid();
    const Vec3 h = 0.5 * g.spacing.cwiseInverse();
    Volume out(g);
    parallel_for(static_cast<std::size_t>(g.dims[2]), [&](std::size_t kk) {
        const int k = static_cast<int>(kk);
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i) {
                const double gx = (detail::value_or_zero(vol, i + 1, j, k) - detail::value_or_zero(vol, i - 1, j, k)) * h[0];
                const double gy = (detail::value_or_zero(vol, i, j + 1, k) - detail::value_or_zero(vol, i, j - 1, k)) * h[1];
                const double gz = (detail::value_or_zero(vol, i, j, k + 1) - detail::value_or_zero(vol, i, j, k - 1)) * h[2];
                out.at(i, j, k) = std::sqrt(gx * gx + gy * gy + gz * gz);
            }
    });
    return out;
}

/// |Laplacian f| with the 7-point stencil in world units, zero outside the grid.
inline Volume laplacian_magnitude(const Volume& vol) {
    const Grid& g = vol.grid();
    const Vec3 h2 = g.spacing.cwiseProduct(g.spacing).cwiseInverse();
    Volume out(g);
    parallel_for(static_cast<std::size_t>(g.dims[2]), [&](std::size_t kk) {
        const int k = static_cast<int>(kk);
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i) {
                const double c = 2.0 * vol.at(i, j, k);
                const double lx = (detail::value_or_zero(vol, i + 1, j, k) + detail::value_or_zero(vol, i - 1, j, k) - c) * h2[0];
                const double ly = (detail::value_or_zero(vol, i, j + 1, k) + detail::value_or_zero(vol, i, j - 1, k) - c) * h2[1];
                const double lz = (detail::value_or_zero(vol, i, j, k + 1) + detail::value_or_zero(vol, i, j, k - 1) - c) * h2[2];
                out.at(i, j, k) = std::abs(lx + ly + lz);
            }
    });
    return out;
}

/// x^p for x >= 0, with exact multiply/sqrt chains for integer and half-integer p.
inline double channel_power(double x, double p) {
    if (p == 1.0) return x;
    const double twice = 2.0 * p;
    if (twice == std::floor(twice) && p <= 16.0) {
        const int whole = static_cast<int>(std::floor(p));
        double r = 1.0;
        for (int i = 0; i < whole; ++i) r *= x;
        if (twice - 2.0 * whole > 0.5) r *= std::sqrt(x);
        return r;
    }
    return std::pow(x, p);
}

namespace detail {

struct BaseKey {
    ChannelType type;
    double sigma;
    auto operator<=>(const BaseKey&) const = default;
};

inline ChannelType base_type(ChannelType t) {
    return t == ChannelType::intensity_power ? ChannelType::smoothed_intensity : t;
}

// Base responses shared between channels, computed once per (operator, sigma).
class BaseResponses {
public:
    BaseResponses(const FilterBank& bank, const Volume& vol) {
        for (const auto& c : bank.channels) {
            const BaseKey key{base_type(c.type), c.sigma_mm};
            if (responses_.contains(key)) continue;
            const Volume& smooth = smoothed(vol, c.sigma_mm);
            switch (key.type) {
                case ChannelType::gradient_magnitude: responses_.emplace(key, gradient_magnitude(smooth)); break;
                case ChannelType::laplacian_magnitude: responses_.emplace(key, laplacian_magnitude(smooth)); break;
                default: {
                    Volume clipped = smooth;
                    for (double& x : clipped.data()) x = std::max(0.0, x);
                    responses_.emplace(key, std::move(clipped));
                }
            }
        }
    }

    [[nodiscard]] const Volume& get(const ChannelSpec& c) const {
        return responses_.at(BaseKey{base_type(c.type), c.sigma_mm});
    }

private:
    const Volume& smoothed(const Volume& vol, double sigma) {
        auto it = smoothed_.find(sigma);
        if (it == smoothed_.end()) it = smoothed_.emplace(sigma, gaussian_smooth(vol, sigma)).first;
        return it->second;
    }

    std::map<double, Volume> smoothed_;
    std::map<BaseKey, Volume> responses_;
};

} // namespace detail

/// Channel k = gain_k * base_k(vol)^power_k, every value >= 0.
inline ChannelStack apply_filter_bank(const FilterBank& bank, const Volume& vol) {
    bank.validate();
    const detail::BaseResponses bases(bank, vol);
    ChannelStack stack(bank.size());
    parallel_for(bank.size(), [&](std::size_t k) {
        const ChannelSpec& c = bank.channels[k];
        const Volume& base = bases.get(c);
        const double g = bank.gain(k);
        Volume ch(vol.grid());
        for (std::size_t i = 0; i < ch.size(); ++i) ch[i] = g * channel_power(base[i], c.power);
        stack[k] = std::move(ch);
    });
    return stack;
}

namespace detail {

struct MomentSums {
    double mass = 0.0;
    Vec3 first = Vec3::Zero();
};

inline void finish_point(const MomentSums& s, double voxel_volume, Vec3& point, double& mass) {
    if (s.mass > 0.0 && std::isfinite(s.mass)) {
        point = s.first / s.mass;
        mass = s.mass * voxel_volume;
    } else {
        point = Vec3::Zero();
        mass = 0.0;
    }
}

// Running sums of f and gamma * f in flat voxel order.
template <class ValueAt>
MomentSums accumulate_moments(const Grid& g, ValueAt&& value_at) {
    MomentSums s;
    std::size_t idx = 0;
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i, ++idx) {
                const double f = value_at(idx);
                if (f == 0.0) continue;
                s.mass += f;
                s.first += f * g.world(i, j, k);
            }
    return s;
}

} // namespace detail

/// Mass-normalized weighted centroid of each channel:
///   point_k = sum_gamma gamma f_k(gamma) / sum_gamma f_k(gamma),
///   mass_k  = sum_gamma f_k(gamma) * voxel volume.
inline PointCloud spatial_means(const ChannelStack& stack) {
    PointCloud cloud;
    cloud.points.resize(stack.size());
    cloud.masses.resize(stack.size());
    parallel_for(stack.size(), [&](std::size_t k) {
        const Volume& ch = stack[k];
        const auto sums = detail::accumulate_moments(ch.grid(), [&](std::size_t i) { return ch[i]; });
        detail::finish_point(sums, ch.grid().voxel_volume(), cloud.points[k], cloud.masses[k]);
    });
    return cloud;
}

/// spatial_means(apply_filter_bank(bank, vol)) without materializing the K channels.
inline PointCloud representation(const FilterBank& bank, const Volume& vol) {
    bank.validate();
    const detail::BaseResponses bases(bank, vol);
    const Grid& g = vol.grid();
    PointCloud cloud;
    cloud.points.resize(bank.size());
    cloud.masses.resize(bank.size());
    parallel_for(bank.size(), [&](std::size_t k) {
        const ChannelSpec& c = bank.channels[k];
        const Volume& base = bases.get(c);
        const double gain = bank.gain(k);
        const auto sums = detail::accumulate_moments(g, [&](std::size_t i) { return gain * channel_power(base[i], c.power); });
        detail::finish_point(sums, g.voxel_volume(), cloud.points[k], cloud.masses[k]);
    });
    return cloud;
}

} // namespace spaer
