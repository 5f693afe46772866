#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lcf/geometry.hpp"
#include "lcf/rng.hpp"

using namespace lcf;

namespace {

RigidPose random_pose(Rng& rng) {
    const Mat3 rot = euler_xyz(rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0),
                               rng.uniform(-3.0, 3.0));
    return RigidPose::make(rot, {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)});
}

PointCloud random_cloud(Rng& rng, std::size_t n) {
    PointCloud cloud;
    for (std::size_t i = 0; i < n; ++i)
        cloud.points.push_back({rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(1, 30)});
    return cloud;
}

} // namespace

TEST_CASE("transform_points identity") {
    Rng rng(7);
    const PointCloud cloud = random_cloud(rng, 50);
    const PointCloud out = transform_points(cloud, RigidPose::identity());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        CHECK(out.points[i].x == cloud.points[i].x);
        CHECK(out.points[i].y == cloud.points[i].y);
        CHECK(out.points[i].z == cloud.points[i].z);
    }
}

TEST_CASE("transform_points translation") {
    PointCloud cloud;
    cloud.points.push_back({0, 0, 5});
    const RigidPose pose = RigidPose::make(Mat3::identity(), {1, 0, 0});
    const PointCloud out = transform_points(cloud, pose);
    CHECK(out.points[0].x == doctest::Approx(1.0));
    CHECK(out.points[0].y == doctest::Approx(0.0));
    CHECK(out.points[0].z == doctest::Approx(5.0));
}

TEST_CASE("transform_points preserves intensity") {
    PointCloud cloud;
    cloud.points.push_back({1, 2, 3});
    cloud.intensity.push_back(0.25);
    const PointCloud out = transform_points(cloud, RigidPose::make(Mat3::identity(), {0, 1, 0}));
    REQUIRE(out.intensity.size() == 1);
    CHECK(out.intensity[0] == 0.25);
}

TEST_CASE("pose round trip returns original points") {
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const RigidPose pose = random_pose(rng);
        const PointCloud cloud = random_cloud(rng, 20);
        const PointCloud back = transform_points(transform_points(cloud, pose), pose.inverse());
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            CHECK(std::fabs(back.points[i].x - cloud.points[i].x) < 1e-9);
            CHECK(std::fabs(back.points[i].y - cloud.points[i].y) < 1e-9);
            CHECK(std::fabs(back.points[i].z - cloud.points[i].z) < 1e-9);
        }
    }
}

TEST_CASE("non-orthonormal rotation rejected") {
    Mat3 bad = Mat3::identity();
    bad(0, 0) = 2.0;
    CHECK_THROWS(RigidPose::make(bad, {0, 0, 0}));
}

TEST_CASE("projection puts on-axis point at principal point") {
    PointCloud cloud;
    cloud.points.push_back({0, 0, 10});
    const CameraModel cam{100, 100, 64, 32, 128, 64};
    const SparseDepthMap map = project_to_depthmap(cloud, cam);
    CHECK(map.at(32, 64) == doctest::Approx(10.0));
    CHECK(map.valid_count() == 1);
}

TEST_CASE("projection maps lateral offset through fx") {
    PointCloud cloud;
    cloud.points.push_back({1, 0, 10});
    const CameraModel cam{100, 100, 64, 32, 128, 64};
    const SparseDepthMap map = project_to_depthmap(cloud, cam);
    // u = 100 * 0.1 + 64 = 74
    CHECK(map.at(32, 74) == doctest::Approx(10.0));
}

TEST_CASE("keep_nearest wins same-pixel collision") {
    PointCloud cloud;
    cloud.points.push_back({0, 0, 9});
    cloud.points.push_back({0, 0, 5});
    const CameraModel cam{100, 100, 64, 32, 128, 64};
    CHECK(project_to_depthmap(cloud, cam, Collision::keep_nearest).at(32, 64) == 5.0);
    CHECK(project_to_depthmap(cloud, cam, Collision::keep_last).at(32, 64) == 5.0);
    std::swap(cloud.points[0], cloud.points[1]);
    CHECK(project_to_depthmap(cloud, cam, Collision::keep_nearest).at(32, 64) == 5.0);
    CHECK(project_to_depthmap(cloud, cam, Collision::keep_last).at(32, 64) == 9.0);
}

TEST_CASE("points behind camera or outside raster are dropped") {
    PointCloud cloud;
    cloud.points.push_back({0, 0, -5});
    cloud.points.push_back({0, 0, 0});
    cloud.points.push_back({50, 0, 1}); // u way outside
    const CameraModel cam{100, 100, 64, 32, 128, 64};
    CHECK(project_to_depthmap(cloud, cam).valid_count() == 0);
}

TEST_CASE("empty cloud yields all-invalid map") {
    const CameraModel cam{100, 100, 64, 32, 128, 64};
    const SparseDepthMap map = project_to_depthmap(PointCloud{}, cam);
    CHECK(map.valid_count() == 0);
    CHECK(map.width == 128);
    CHECK(map.height == 64);
}

TEST_CASE("projection/unprojection round trip within half-pixel bounds") {
    Rng rng(23);
    const CameraModel cam{120, 110, 64, 32, 128, 64};
    for (int trial = 0; trial < 500; ++trial) {
        PointCloud cloud;
        const Vec3 p{rng.uniform(-3, 3), rng.uniform(-1.5, 1.5), rng.uniform(2, 40)};
        cloud.points.push_back(p);
        const SparseDepthMap map = project_to_depthmap(cloud, cam);
        if (map.valid_count() != 1) continue;
        for (int v = 0; v < map.height; ++v)
            for (int u = 0; u < map.width; ++u) {
                if (!map.valid(v, u)) continue;
                const double z = map.at(v, u);
                const double x = (u - cam.cx) / cam.fx * z;
                const double y = (v - cam.cy) / cam.fy * z;
                CHECK(z == p.z);
                CHECK(std::fabs(x - p.x) <= 0.5 * z / cam.fx + 1e-9);
                CHECK(std::fabs(y - p.y) <= 0.5 * z / cam.fy + 1e-9);
            }
    }
}

TEST_CASE("outlier_oracle flags only large mismatches on valid pixels") {
    SparseDepthMap proj(4, 2);
    std::vector<double> truth(8, 10.0);
    proj.at(0, 0) = 10.0;
    proj.at(0, 1) = 12.5; // off by 2.5 = 2.5 * tau
    proj.at(1, 3) = 10.0;
    // pixel (1,0) invalid but truth huge there
    truth[4] = 500.0;

    const auto mask = outlier_oracle(proj, truth, 4, 2, 1.0);
    CHECK(mask[0] == 0);
    CHECK(mask[1] == 1);
    CHECK(mask[4] == 0); // invalid pixels never flagged
    CHECK(mask[7] == 0);

    SUBCASE("all-equal map has empty mask") {
        SparseDepthMap same(4, 2);
        for (int v = 0; v < 2; ++v)
            for (int u = 0; u < 4; ++u) same.at(v, u) = 10.0;
        const auto none = outlier_oracle(same, truth, 4, 2, 600.0);
        for (auto m : none) CHECK(m == 0);
    }
}

TEST_CASE("outlier_oracle rejects size mismatch") {
    SparseDepthMap proj(4, 2);
    std::vector<double> truth(6, 0.0);
    CHECK_THROWS(outlier_oracle(proj, truth, 4, 2, 1.0));
}
