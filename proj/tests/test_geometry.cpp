#include "oracles.hpp"

#include "spaer/geometry.hpp"
#include "spaer/rng.hpp"
#include "spaer/svd3.hpp"

#include <gtest/gtest.h>

using namespace spaer;

namespace {

double max_abs(const Mat3& a) { return a.cwiseAbs().maxCoeff(); }

} // namespace

TEST(Geometry, ApplyIdentityAndAxisRotation) {
    EXPECT_EQ(apply(RigidTransform::identity(), Vec3(1, 2, 3)), Vec3(1, 2, 3));
    const Vec3 v = apply(RigidTransform::from_rotation(rot_z(90)), Vec3(1, 0, 0));
    EXPECT_EQ(v, Vec3(0, 1, 0));
}

TEST(Geometry, ApplyMatchesHomogeneousMatrix) {
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        const RigidTransform q = oracle::random_transform(rng, 180, 50);
        const Vec3 v(rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(-100, 100));
        EXPECT_LT((apply(q, v) - oracle::apply_h(oracle::homogeneous(q), v)).norm(), 1e-12);
    }
}

TEST(Geometry, ComposeIdentityInverseAndMatrixProduct) {
    Rng rng(2);
    for (int i = 0; i < 100; ++i) {
        const RigidTransform a = oracle::random_transform(rng, 180, 50);
        const RigidTransform b = oracle::random_transform(rng, 180, 50);
        const RigidTransform ai = compose(a, RigidTransform::identity());
        EXPECT_LT(max_abs(ai.rotation - a.rotation), 1e-15);
        EXPECT_LT((ai.translation - a.translation).norm(), 1e-15);

        const RigidTransform id = compose(a, inverse(a));
        EXPECT_LT(max_abs(id.rotation - Mat3::Identity()), 1e-10);
        EXPECT_LT(id.translation.norm(), 1e-10);

        const Eigen::Matrix4d h = oracle::homogeneous(a) * oracle::homogeneous(b);
        EXPECT_LT((oracle::homogeneous(compose(a, b)) - h).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Geometry, InverseCases) {
    const RigidTransform i = inverse(RigidTransform::identity());
    EXPECT_EQ(i.rotation, Mat3::Identity());
    EXPECT_EQ(i.translation, Vec3::Zero());
    EXPECT_EQ(inverse(RigidTransform::from_translation(Vec3(5, 0, 0))).translation, Vec3(-5, 0, 0));

    Rng rng(3);
    const RigidTransform q = oracle::random_transform(rng, 180, 50);
    const RigidTransform qi = inverse(q);
    EXPECT_LT(max_abs(qi.rotation - q.rotation.transpose()), 1e-15);
    EXPECT_LT((qi.translation + q.rotation.transpose() * q.translation).norm(), 1e-12);
    for (int k = 0; k < 100; ++k) {
        const Vec3 v(rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(-100, 100));
        EXPECT_LT((apply(qi, apply(q, v)) - v).norm(), 1e-10);
    }
}

TEST(Geometry, GeodesicAngle) {
    EXPECT_EQ(geodesic_angle(rot_y(33), rot_y(33)), 0.0);
    EXPECT_NEAR(geodesic_angle(Mat3::Identity(), rot_x(20)), 20.0, 1e-12);
    const Mat3 r = rot_x(10) * rot_y(10);
    EXPECT_NEAR(geodesic_angle(r, Mat3::Identity()), oracle::angle_deg(r), 1e-9);
    EXPECT_NEAR(geodesic_angle(Mat3::Identity(), rot_z(180)), 180.0, 1e-12);
}

TEST(Geometry, GeodesicSymmetryAndTriangleInequality) {
    Rng rng(4);
    for (int i = 0; i < 300; ++i) {
        const Mat3 a = oracle::random_transform(rng, 180, 0).rotation;
        const Mat3 b = oracle::random_transform(rng, 180, 0).rotation;
        const Mat3 c = oracle::random_transform(rng, 180, 0).rotation;
        EXPECT_NEAR(geodesic_angle(a, b), geodesic_angle(b, a), 1e-12);
        EXPECT_LE(geodesic_angle(a, c), geodesic_angle(a, b) + geodesic_angle(b, c) + 1e-8);
        EXPECT_NEAR(geodesic_angle(a, b), oracle::angle_deg(a * b.transpose()), 1e-8);
    }
}

TEST(Geometry, EulerCases) {
    EXPECT_EQ(rotation_from_euler(0, 0, 0), Mat3::Identity());
    Mat3 expected;
    expected << 0, -1, 0, 1, 0, 0, 0, 0, 1;
    EXPECT_EQ(rotation_from_euler(0, 0, 90, EulerOrder::XYZ), expected);
    EXPECT_EQ(rot_z(90), expected);
}

TEST(Geometry, EulerIsIntrinsicXyz) {
    const Mat3 r = rotation_from_euler(10, 20, 30);
    const Mat3 e = (Eigen::AngleAxisd(deg2rad(10), Vec3::UnitX()) * Eigen::AngleAxisd(deg2rad(20), Vec3::UnitY()) *
                    Eigen::AngleAxisd(deg2rad(30), Vec3::UnitZ()))
                       .toRotationMatrix();
    EXPECT_LT(max_abs(r - e), 1e-14);
}

TEST(Geometry, QuaternionRoundTrip) {
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        const Mat3 r = rotation_from_euler(rng.uniform(-180, 180), rng.uniform(-180, 180), rng.uniform(-180, 180),
                                           static_cast<EulerOrder>(rng.uniform_int(0, 5)));
        EXPECT_LT(orthogonality_error(r), 1e-9);
        EXPECT_NEAR(r.determinant(), 1.0, 1e-9);
        const RigidTransform q = quaternion_roundtrip({r, Vec3(1, 2, 3)});
        EXPECT_LT(max_abs(q.rotation - r), 1e-9);
        EXPECT_GE(to_quaternion(r).w, 0.0);
    }
    // Near 180 degrees the trace branch is not taken.
    for (const Mat3& r : {rot_x(180), rot_y(180), rot_z(180), axis_angle(Vec3(1, 1, 0), 179.999)})
        EXPECT_LT(max_abs(to_matrix(to_quaternion(r)) - r), 1e-9);
}

TEST(Geometry, CompositionStaysOnGroup) {
    Rng rng(6);
    RigidTransform acc;
    for (int i = 0; i < 10000; ++i) {
        acc = compose(oracle::random_transform(rng, 30, 1), acc);
        ASSERT_TRUE(is_rotation(acc.rotation)) << "step " << i;
    }
}

TEST(Geometry, ComposeAssociatesWithApply) {
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const RigidTransform a = oracle::random_transform(rng, 180, 50);
        const RigidTransform b = oracle::random_transform(rng, 180, 50);
        const Vec3 v(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50));
        EXPECT_LT((apply(compose(a, b), v) - apply(a, apply(b, v))).norm(), 1e-10);
    }
}

TEST(Svd3, TrivialCases) {
    const Svd3 s = svd3(Mat3::Identity());
    EXPECT_LT((s.singular - Vec3(1, 1, 1)).norm(), 1e-15);
    EXPECT_LT(max_abs(s.u * s.v.transpose() - Mat3::Identity()), 1e-15);

    const Svd3 d = svd3(Vec3(3, 2, 1).asDiagonal());
    EXPECT_LT((d.singular - Vec3(3, 2, 1)).norm(), 1e-14);
    const Svd3 z = svd3(Mat3::Zero());
    EXPECT_EQ(z.singular, Vec3::Zero());
}

TEST(Svd3, RandomMatricesAgainstJacobiSvd) {
    Rng rng(8);
    for (int i = 0; i < 100; ++i) {
        Mat3 m;
        for (int e = 0; e < 9; ++e) m(e) = rng.uniform(-10, 10);
        if (i % 10 == 0) m.col(2) = 0.5 * m.col(0) - m.col(1); // rank 2
        const Svd3 s = svd3(m);
        const double scale = m.norm();
        EXPECT_LT(max_abs(s.u * s.singular.asDiagonal() * s.v.transpose() - m), 1e-10 * scale);
        EXPECT_LT(orthogonality_error(s.u), 1e-10);
        EXPECT_LT(orthogonality_error(s.v), 1e-10);
        EXPECT_GE(s.singular[0], s.singular[1]);
        EXPECT_GE(s.singular[1], s.singular[2]);
        EXPECT_GE(s.singular[2], 0.0);

        const Vec3 ref = Eigen::JacobiSVD<Mat3>(m).singularValues();
        EXPECT_LT((s.singular - ref).cwiseAbs().maxCoeff(), 1e-9 * std::max(1.0, scale));
    }
}

TEST(Svd3, NearestRotation) {
    Rng rng(9);
    const Mat3 r = oracle::random_transform(rng, 180, 0).rotation;
    EXPECT_LT(max_abs(nearest_rotation(r) - r), 1e-12);
    Mat3 noisy = r;
    noisy(0, 1) += 1e-6;
    EXPECT_TRUE(is_rotation(nearest_rotation(noisy)));
}

TEST(Rng, StreamIsStableAndSeeded) {
    Rng a(123), b(123), c(124);
    std::vector<std::uint64_t> xa, xb, xc;
    for (int i = 0; i < 16; ++i) {
        xa.push_back(a.next());
        xb.push_back(b.next());
        xc.push_back(c.next());
    }
    EXPECT_EQ(xa, xb);
    EXPECT_NE(xa, xc);
    EXPECT_NE(Rng::derived(5, 1).next(), Rng::derived(5, 2).next());

    Rng n(77);
    double sum = 0.0, sq = 0.0;
    const int count = 200000;
    for (int i = 0; i < count; ++i) {
        const double x = n.normal();
        sum += x;
        sq += x * x;
    }
    EXPECT_NEAR(sum / count, 0.0, 0.01);
    EXPECT_NEAR(sq / count, 1.0, 0.01);
}
