#include "oracles.hpp"

#include "spaer/eqfeatures.hpp"
#include "spaer/errors.hpp"
#include "spaer/simulator.hpp"

#include <gtest/gtest.h>

using namespace spaer;

namespace {

FilterBank default_bank() { return FilterBank::with_unit_gains(default_channels()); }

Volume sphere(const Grid& g, const Vec3& c, double radius) {
    Volume v(g);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double r = (g.world(i) - c).norm();
        v[i] = r < radius ? 1.0 - (r / radius) * (r / radius) : 0.0;
    }
    return v;
}

const Volume& smooth_phantom() {
    static const Volume v = [] {
        SimConfig cfg;
        cfg.seed = 3;
        return normalize_intensity(gaussian_smooth(make_phantom(cfg), 6.0));
    }();
    return v;
}

double max_point_error(const PointCloud& moved, const PointCloud& base, const RigidTransform& q) {
    double worst = 0.0;
    for (std::size_t k = 0; k < base.size(); ++k) worst = std::max(worst, (apply(q, base.points[k]) - moved.points[k]).norm());
    return worst;
}

} // namespace

TEST(FilterBank, DefaultBankShape) {
    const FilterBank b = default_bank();
    EXPECT_EQ(b.size(), 32u);
    for (std::size_t k = 0; k < b.size(); ++k) EXPECT_NEAR(b.gain(k), 1.0, 1e-12);
    EXPECT_NO_THROW(b.validate());
}

TEST(FilterBank, InvalidChannelSpecs) {
    const Volume v(Grid::centered(8, 3.0), 1.0);
    EXPECT_THROW(apply_filter_bank(FilterBank::with_unit_gains({{ChannelType::smoothed_intensity, 0.0, 1.0}}), v),
                 InvalidChannelSpec);
    EXPECT_THROW(apply_filter_bank(FilterBank::with_unit_gains({{ChannelType::gradient_magnitude, 3.0, 0.5}}), v),
                 InvalidChannelSpec);
    EXPECT_THROW(representation(FilterBank{}, v), InvalidChannelSpec);
    EXPECT_THROW(channel_type_from_string("sobel"), InvalidChannelSpec);
    EXPECT_EQ(channel_type_from_string(to_string(ChannelType::laplacian_magnitude)), ChannelType::laplacian_magnitude);
}

TEST(FilterBank, ZeroVolumeGivesZeroChannelsAndInvalidPoints) {
    const Volume v(Grid::centered(12, 3.0));
    for (const Volume& ch : apply_filter_bank(default_bank(), v))
        for (double x : ch.values()) EXPECT_EQ(x, 0.0);
    const PointCloud c = representation(default_bank(), v);
    EXPECT_EQ(c.valid_count(), 0u);
}

TEST(FilterBank, SmoothingAnImpulseGivesTheSeparableKernel) {
    const Grid g = Grid::centered(15, 2.0);
    Volume v(g);
    v.at(7, 7, 7) = 1.0;
    const double sigma = 3.0;
    const auto ch = apply_filter_bank(FilterBank::with_unit_gains({{ChannelType::smoothed_intensity, sigma, 1.0}}), v);
    // Oracle: normalized 1D samples of exp(-x^2 / 2 sigma^2), outer product over the three axes.
    const int radius = static_cast<int>(std::ceil(3.0 * sigma / 2.0));
    std::vector<double> k1(static_cast<std::size_t>(2 * radius + 1));
    double s = 0.0;
    for (int i = -radius; i <= radius; ++i) s += (k1[static_cast<std::size_t>(i + radius)] = std::exp(-(2.0 * i) * (2.0 * i) / (2 * sigma * sigma)));
    for (double& x : k1) x /= s;
    for (int k = -radius; k <= radius; ++k)
        for (int j = -radius; j <= radius; ++j)
            for (int i = -radius; i <= radius; ++i) {
                const double expected = k1[static_cast<std::size_t>(i + radius)] * k1[static_cast<std::size_t>(j + radius)] *
                                        k1[static_cast<std::size_t>(k + radius)];
                EXPECT_NEAR(ch[0].at(7 + i, 7 + j, 7 + k), expected, 1e-15);
            }
    EXPECT_EQ(ch[0].at(0, 0, 0), 0.0);
}

TEST(FilterBank, GradientOfRampIsItsSlope) {
    const Grid g = Grid::centered(16, 3.0);
    Volume ramp(g);
    for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = 0.25 * g.world(i)[0] + 7.0;
    const Volume gm = gradient_magnitude(ramp);
    for (int k = 1; k < 15; ++k)
        for (int j = 1; j < 15; ++j)
            for (int i = 1; i < 15; ++i) EXPECT_NEAR(gm.at(i, j, k), 0.25, 1e-12);
    const Volume lap = laplacian_magnitude(ramp);
    EXPECT_NEAR(lap.at(8, 8, 8), 0.0, 1e-12);
}

TEST(FilterBank, ChannelsAreNonNegative) {
    const Volume& v = smooth_phantom();
    const auto stack = apply_filter_bank(default_bank(), v);
    for (const Volume& ch : stack)
        for (double x : ch.values()) ASSERT_GE(x, 0.0);
    for (double m : spatial_means(stack).masses) EXPECT_GE(m, 0.0);
}

TEST(SpatialMeans, DeltaGivesItsPosition) {
    const Grid g = Grid::centered(9, 3.0);
    Volume v(g);
    v.at(2, 5, 7) = 3.0;
    const PointCloud c = spatial_means({v});
    EXPECT_EQ(c.points[0], g.world(2, 5, 7));
    EXPECT_DOUBLE_EQ(c.masses[0], 3.0 * 27.0);
}

TEST(SpatialMeans, SymmetricPhantomSitsAtItsCenter) {
    // Filter support is 8 voxels of sphere plus 6 of kernel; keep it off the edges.
    const Grid g = Grid::centered(40, 3.0);
    const Vec3 c = g.world(21, 19, 20);
    const PointCloud cloud = representation(default_bank(), sphere(g, c, 24.0));
    ASSERT_EQ(cloud.valid_count(), 32u);
    for (const Vec3& p : cloud.points) EXPECT_LT((p - c).norm(), 1e-9);
}

TEST(SpatialMeans, ShiftMovesEveryPoint) {
    const Volume& v = smooth_phantom();
    const Volume shifted = resample_rigid(v, RigidTransform::from_translation(Vec3(-6, 3, 0)));
    const PointCloud a = representation(default_bank(), v);
    const PointCloud b = representation(default_bank(), shifted);
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_LT((b.points[k] - a.points[k] - Vec3(6, -3, 0)).norm(), 0.05);
}

TEST(Representation, IdentityResampleGivesIdenticalCloud) {
    const Volume& v = smooth_phantom();
    const PointCloud a = representation(default_bank(), v);
    const PointCloud b = representation(default_bank(), resample_rigid(v, RigidTransform::identity()));
    EXPECT_EQ(a.points, b.points);
    EXPECT_EQ(a.masses, b.masses);
}

TEST(Representation, MatchesMaterializedChannels) {
    const Volume& v = smooth_phantom();
    const PointCloud a = representation(default_bank(), v);
    const PointCloud b = spatial_means(apply_filter_bank(default_bank(), v));
    for (std::size_t k = 0; k < a.size(); ++k) {
        EXPECT_LT((a.points[k] - b.points[k]).norm(), 1e-9);
        EXPECT_NEAR(a.masses[k], b.masses[k], 1e-9 * b.masses[k]);
    }
}

TEST(Representation, QuarterTurnIsExact) {
    const Volume& v = smooth_phantom();
    const PointCloud a = representation(default_bank(), v);
    const RigidTransform q = RigidTransform::from_rotation(rot_z(90));
    const PointCloud b = representation(default_bank(), resample_rigid(v, inverse(q)));
    EXPECT_LT(max_point_error(b, a, q), 1e-9);
}

TEST(Representation, ArbitraryRotationWithinTolerance) {
    const Volume& v = smooth_phantom();
    const PointCloud a = representation(default_bank(), v);
    const RigidTransform q = RigidTransform::from_rotation(axis_angle(Vec3(1, 2, 3).normalized(), 17.0));
    const PointCloud b = representation(default_bank(), resample_rigid(v, inverse(q)));
    EXPECT_LT(max_point_error(b, a, q), 0.3);
}

TEST(Representation, GainScalesMassNotPoint) {
    const Volume& v = smooth_phantom();
    FilterBank bank = default_bank();
    const PointCloud a = representation(bank, v);
    bank.raw_gains[5] = inverse_softplus(3.5);
    const PointCloud b = representation(bank, v);
    EXPECT_NEAR(b.masses[5], 3.5 * a.masses[5], 1e-9 * b.masses[5]);
    EXPECT_LT((b.points[5] - a.points[5]).norm(), 1e-9);
    EXPECT_EQ(b.points[4], a.points[4]);
}

TEST(Representation, SoftplusRoundTrip) {
    for (double y : {1e-3, 0.5, 1.0, 7.0, 50.0}) EXPECT_NEAR(softplus(inverse_softplus(y)), y, 1e-12 * std::max(1.0, y));
}

TEST(Representation, Deterministic) {
    const Volume& v = smooth_phantom();
    const int before = threads_setting();
    set_threads(1);
    const PointCloud a = representation(default_bank(), v);
    set_threads(4);
    const PointCloud b = representation(default_bank(), v);
    set_threads(before);
    EXPECT_EQ(a.points, b.points);
    EXPECT_EQ(a.masses, b.masses);
}
