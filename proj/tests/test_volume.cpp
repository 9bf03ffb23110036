#include "oracles.hpp"

#include "spaer/errors.hpp"
#include "spaer/volume.hpp"
#include "spaer/volume_io.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace spaer;
namespace fs = std::filesystem;

namespace {

Volume from_function(const Grid& g, const std::function<double(const Vec3&)>& f) {
    Volume v(g);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(g.world(i));
    return v;
}

Volume random_volume(const Grid& g, std::uint64_t seed) {
    Rng rng(seed);
    Volume v(g);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = rng.uniform();
    return v;
}

Volume smooth_blob(const Grid& g) {
    return from_function(g, [](const Vec3& p) {
        const Vec3 a(20, -10, 5);
        return std::exp(-p.squaredNorm() / (2 * 18.0 * 18.0)) + 0.6 * std::exp(-(p - a).squaredNorm() / (2 * 9.0 * 9.0));
    });
}

fs::path temp_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("spaer_test_volume_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

} // namespace

TEST(Volume, ShapeValidation) {
    const Grid g = Grid::centered(Dims{4, 5, 6}, Vec3(1, 2, 3));
    EXPECT_EQ(Volume(g).size(), 120u);
    EXPECT_THROW(Volume(g, std::vector<double>(7)), ShapeMismatch);
    Grid bad = g;
    bad.spacing[1] = 0.0;
    EXPECT_THROW(Volume{bad}, ShapeMismatch);
    EXPECT_LT((g.center()).norm(), 1e-12);
}

TEST(Volume, TrilinearLatticeAndMidpoint) {
    const Grid g = Grid::centered(8, 3.0);
    const Volume v = random_volume(g, 1);
    EXPECT_EQ(trilinear_sample(v, g.world(2, 3, 4)), v.at(2, 3, 4));
    const Vec3 mid = 0.5 * (g.world(2, 3, 4) + g.world(3, 3, 4));
    EXPECT_NEAR(trilinear_sample(v, mid), 0.5 * (v.at(2, 3, 4) + v.at(3, 3, 4)), 1e-15);
}

TEST(Volume, TrilinearReproducesAffineFields) {
    const Grid g = Grid::centered(Dims{10, 12, 9}, Vec3(2.0, 3.0, 2.5));
    const Volume v = from_function(g, [](const Vec3& p) { return 2 * p[0] + 3 * p[1] - p[2]; });
    Rng rng(2);
    const Vec3 lo = g.world(0, 0, 0), hi = g.world(9, 11, 8);
    for (int i = 0; i < 1000; ++i) {
        const Vec3 p(rng.uniform(lo[0], hi[0]), rng.uniform(lo[1], hi[1]), rng.uniform(lo[2], hi[2]));
        EXPECT_NEAR(trilinear_sample(v, p), 2 * p[0] + 3 * p[1] - p[2], 1e-9);
    }
}

TEST(Volume, OutsideSamplesAreZero) {
    const Grid g = Grid::centered(6, 3.0);
    const Volume v(g, 1.0);
    EXPECT_EQ(trilinear_sample(v, Vec3(100, 0, 0)), 0.0);
    EXPECT_EQ(trilinear_sample(v, g.world(0, 0, 0) - Vec3(3.0, 0, 0)), 0.0);
    // Half a voxel beyond the edge blends with the zero padding.
    EXPECT_NEAR(trilinear_sample(v, g.world(5, 2, 2) + Vec3(1.5, 0, 0)), 0.5, 1e-15);
}

TEST(Volume, ResampleIdentityIsBitwise) {
    const Volume v = random_volume(Grid::centered(12, 3.0), 3);
    EXPECT_TRUE(resample_rigid(v, RigidTransform::identity()) == v);
}

TEST(Volume, QuarterTurnsArePermutations) {
    const Volume v = random_volume(Grid::centered(11, 3.0), 4);
    EXPECT_TRUE(resample_rigid(v, RigidTransform::from_rotation(rot_z(90))) == oracle::permute(v, rot_z(90)));
    const Volume e = random_volume(Grid::centered(10, 2.0), 5);
    for (const Mat3& r : oracle::cube_rotations())
        EXPECT_TRUE(resample_rigid(e, RigidTransform::from_rotation(r)) == oracle::permute(e, r));
}

TEST(Volume, IntegerShift) {
    const Grid g = Grid::centered(10, 3.0);
    const Volume v = random_volume(g, 6);
    // Pull-back by +3 mm in x reads the voxel one index further: content moves by -1.
    EXPECT_TRUE(resample_rigid(v, RigidTransform::from_translation(Vec3(3, 0, 0))) == oracle::shift(v, -1, 0, 0));
    EXPECT_TRUE(resample_rigid(v, RigidTransform::from_translation(Vec3(-3, 6, 0))) == oracle::shift(v, 1, -2, 0));
}

TEST(Volume, ResampleRoundTripInterior) {
    const Grid g = Grid::centered(32, 3.0);
    const Volume v = smooth_blob(g);
    const RigidTransform q{rotation_from_euler(7, -4, 11), Vec3(2.2, -1.3, 0.7)};
    const Volume back = resample_rigid(resample_rigid(v, q), inverse(q));
    double acc = 0.0;
    std::size_t count = 0;
    for (int k = 0; k < 32; ++k)
        for (int j = 0; j < 32; ++j)
            for (int i = 0; i < 32; ++i)
                if (g.boundary_distance(i, j, k) >= 2) {
                    const double d = back.at(i, j, k) - v.at(i, j, k);
                    acc += d * d;
                    ++count;
                }
    EXPECT_LT(acc / static_cast<double>(count), 1e-3);
}

TEST(Volume, Normalize) {
    const Grid g = Grid::centered(Dims{3, 1, 1}, Vec3(1, 1, 1));
    const Volume v(g, std::vector<double>{10, 20, 30});
    const Volume n = normalize_intensity(v);
    EXPECT_EQ(n.values(), (std::vector<double>{0.0, 0.5, 1.0}));
    EXPECT_EQ(normalize_intensity(Volume(g, 4.0)).values(), std::vector<double>(3, 0.0));
    const Volume r = normalize_intensity(random_volume(Grid::centered(6, 1.0), 7));
    EXPECT_TRUE(normalize_intensity(r) == r);
}

TEST(Volume, SsdNccHandValues) {
    const Grid g = Grid::centered(2, 1.0);
    const Volume a(g, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
    const Volume b(g, std::vector<double>{2, 2, 1, 4, 6, 6, 7, 10});
    // differences: -1 0 2 0 -1 0 0 -2 -> squares 1 0 4 0 1 0 0 4 = 10 over 8
    EXPECT_DOUBLE_EQ(ssd(a, b), 10.0 / 8.0);
    EXPECT_EQ(ssd(a, a), 0.0);

    double ma = 4.5, mb = 38.0 / 8.0, sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < 8; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    EXPECT_NEAR(ncc(a, b), sab / std::sqrt(saa * sbb), 1e-14);

    Volume affine = a;
    for (double& x : affine.data()) x = 2 * x + 5;
    EXPECT_NEAR(ncc(a, affine), 1.0, 1e-14);
    EXPECT_NEAR(ncc(a, a), 1.0, 1e-14);

    const Volume other(Grid::centered(2, 2.0));
    EXPECT_THROW(ssd(a, other), GridMismatch);
    EXPECT_THROW(ncc(a, other), GridMismatch);
    EXPECT_THROW(dice(a, other, 0.5), GridMismatch);
}

TEST(Volume, SsdIsZeroOnlyForEqualData) {
    const Volume a = random_volume(Grid::centered(5, 1.0), 8);
    Volume b = a;
    b[17] += 1e-6;
    EXPECT_GT(ssd(a, b), 0.0);
    EXPECT_GE(ssd(b, a), 0.0);
}

TEST(Volume, Dice) {
    const Grid g = Grid::centered(Dims{200, 1, 1}, Vec3(1, 1, 1));
    Volume a(g), b(g);
    for (int i = 0; i < 100; ++i) a[static_cast<std::size_t>(i)] = 1.0;
    for (int i = 60; i < 120; ++i) b[static_cast<std::size_t>(i)] = 1.0;
    EXPECT_DOUBLE_EQ(dice(a, b, 0.5), 0.5);
    EXPECT_DOUBLE_EQ(dice(a, a, 0.5), 1.0);
    Volume c(g);
    for (int i = 150; i < 160; ++i) c[static_cast<std::size_t>(i)] = 1.0;
    EXPECT_DOUBLE_EQ(dice(a, c, 0.5), 0.0);
    EXPECT_DOUBLE_EQ(dice(Volume(g), Volume(g), 0.5), 1.0);
}

TEST(VolumeIo, RoundTripAndSidecar) {
    const fs::path dir = temp_dir("io");
    const Grid g = Grid::centered(Dims{5, 4, 3}, Vec3(1.5, 2, 3));
    const Volume v = random_volume(g, 9);
    io::write_volume(dir / "a.vol", v);
    const Volume r = io::read_volume(dir / "a.vol");
    EXPECT_TRUE(r.grid() == g);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(r[i], static_cast<double>(static_cast<float>(v[i])));
    EXPECT_TRUE(fs::exists(io::sidecar_path(dir / "a.vol")));

    io::write_sequence(dir / "seq", {v, v});
    EXPECT_TRUE(io::is_sequence_dir(dir / "seq"));
    EXPECT_EQ(io::read_sequence(dir / "seq").size(), 2u);
    EXPECT_THROW(io::read_volume(dir / "missing.vol"), IoError);

    VectorField f(g);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = Vec3(0.5 * static_cast<double>(i), -1, 2);
    io::write_field(dir / "f.vol", f, "velocity");
    const auto lf = io::read_field(dir / "f.vol");
    EXPECT_EQ(lf.field_type, "velocity");
    EXPECT_EQ(lf.field[7], Vec3(3.5, -1, 2));
    EXPECT_THROW(io::read_volume(dir / "f.vol"), IoError);
}

TEST(VolumeIo, TruncatedDataIsRejected) {
    const fs::path dir = temp_dir("trunc");
    io::write_volume(dir / "a.vol", Volume(Grid::centered(4, 1.0), 1.0));
    fs::resize_file(dir / "a.vol", 10);
    EXPECT_THROW(io::read_volume(dir / "a.vol"), IoError);
}
