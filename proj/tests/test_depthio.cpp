#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>

#include "lcf/depthio.hpp"
#include "lcf/rng.hpp"
#include "lcf/util.hpp"

using namespace lcf;

namespace {

std::filesystem::path tmp_dir() {
    const auto dir = std::filesystem::path("depthio_tmp");
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

SparseDepthMap random_sparse(Rng& rng, int w, int h, double density) {
    SparseDepthMap map(w, h);
    for (double& d : map.depth)
        if (rng.uniform() < density) d = rng.uniform(0.5, 80.0);
    return map;
}

} // namespace

TEST_CASE("proxy min over a 3x3 patch") {
    SparseDepthMap map(5, 5);
    map.at(2, 2) = 4.0;
    map.at(1, 1) = 2.5;
    map.at(3, 3) = 7.1;
    const ProxyLabelMap proxy = compute_proxy_labels(map, 3, ProxyReducer::min);
    CHECK(proxy.at(2, 2) == 2.5);
    CHECK(proxy.at(1, 1) == 2.5);  // its own 3x3 patch reaches (2,2) and itself
    CHECK(proxy.at(3, 3) == doctest::Approx(4.0)); // patch {4.0, 7.1}
    CHECK(proxy.at(0, 0) == 0.0);  // invalid stays invalid
}

TEST_CASE("isolated pixel keeps its own depth under self-inclusion") {
    SparseDepthMap map(9, 9);
    map.at(4, 4) = 3.2;
    const ProxyLabelMap proxy = compute_proxy_labels(map, 3, ProxyReducer::min);
    CHECK(proxy.at(4, 4) == 3.2);

    SUBCASE("with the center excluded it becomes undefined") {
        const ProxyLabelMap ex = compute_proxy_labels(map, 3, ProxyReducer::min, false);
        CHECK(ex.at(4, 4) == 0.0);
    }
}

TEST_CASE("proxy avg") {
    SparseDepthMap map(3, 3);
    map.at(0, 0) = 2.0;
    map.at(1, 1) = 4.0;
    const ProxyLabelMap proxy = compute_proxy_labels(map, 3, ProxyReducer::avg);
    CHECK(proxy.at(1, 1) == doctest::Approx(3.0));
}

TEST_CASE("even window is rejected") {
    SparseDepthMap map(4, 4);
    map.at(0, 0) = 1.0;
    CHECK_THROWS_WITH_AS(compute_proxy_labels(map, 4, ProxyReducer::min), "window must be odd",
                         std::invalid_argument);
}

TEST_CASE("proxy properties on random maps") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const SparseDepthMap map = random_sparse(rng, 24, 16, 0.3);
        if (map.valid_count() == 0) continue;
        const ProxyLabelMap p3 = compute_proxy_labels(map, 3, ProxyReducer::min);
        const ProxyLabelMap p5 = compute_proxy_labels(map, 5, ProxyReducer::min);
        for (int v = 0; v < map.height; ++v)
            for (int u = 0; u < map.width; ++u) {
                // validity preservation
                CHECK((map.valid(v, u)) == (p3.valid(v, u)));
                if (!map.valid(v, u)) continue;
                // min dominance
                CHECK(p3.at(v, u) <= map.at(v, u));
                // widening the window can only lower the min
                CHECK(p5.at(v, u) <= p3.at(v, u));
            }
    }
}

TEST_CASE("proxy depends only on the multiset of valid depths in the patch") {
    SparseDepthMap a(5, 5), b(5, 5);
    const double vals[4] = {9.0, 3.5, 6.0, 7.0};
    // same multiset arranged differently inside the 5x5 patch of the center
    a.at(2, 2) = vals[0]; a.at(0, 0) = vals[1]; a.at(1, 3) = vals[2]; a.at(4, 4) = vals[3];
    b.at(2, 2) = vals[0]; b.at(4, 0) = vals[1]; b.at(0, 4) = vals[2]; b.at(2, 1) = vals[3];
    for (auto reducer : {ProxyReducer::min, ProxyReducer::avg}) {
        const ProxyLabelMap pa = compute_proxy_labels(a, 5, reducer);
        const ProxyLabelMap pb = compute_proxy_labels(b, 5, reducer);
        CHECK(pa.at(2, 2) == pb.at(2, 2));
    }
}

TEST_CASE("border windows are clipped, not padded") {
    SparseDepthMap map(3, 3);
    map.at(0, 0) = 5.0;
    const ProxyLabelMap proxy = compute_proxy_labels(map, 3, ProxyReducer::avg);
    CHECK(proxy.at(0, 0) == 5.0); // zeros outside the raster never enter the reducer
}

TEST_CASE("abs_diff_confidence") {
    SparseDepthMap depth(2, 1);
    depth.at(0, 0) = 5.0;
    depth.at(0, 1) = 10.0;
    ProxyLabelMap proxy;
    proxy.width = 2;
    proxy.height = 1;
    proxy.proxy = {5.0, 7.5};
    const ConfidenceMap conf = abs_diff_confidence(depth, proxy);
    CHECK(conf.at(0, 0) == 1.0); // most confident
    CHECK(conf.at(0, 1) == 3.5);

    ProxyLabelMap wrong;
    wrong.width = 3;
    wrong.height = 1;
    wrong.proxy = {0, 0, 0};
    CHECK_THROWS(abs_diff_confidence(depth, wrong));
}

TEST_CASE("velodyne bin reader") {
    const auto dir = tmp_dir();
    const auto path = dir / "scan.bin";

    SUBCASE("two records") {
        PointCloud cloud;
        cloud.points = {{1, 2, 3}, {4, 5, 6}};
        cloud.intensity = {0.5, 0.25};
        write_velodyne_bin(cloud, path);
        CHECK(std::filesystem::file_size(path) == 32);
        const PointCloud back = read_velodyne_bin(path);
        REQUIRE(back.size() == 2);
        CHECK(back.points[1].x == 4.0);
        CHECK(back.intensity[0] == 0.5);

        // bit-exact file round trip
        write_velodyne_bin(back, dir / "scan2.bin");
        CHECK(slurp(path) == slurp(dir / "scan2.bin"));
    }

    SUBCASE("empty file") {
        std::ofstream(path, std::ios::binary | std::ios::trunc);
        CHECK(read_velodyne_bin(path).size() == 0);
    }

    SUBCASE("truncated record reports the byte offset") {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        const char junk[17] = {0};
        out.write(junk, 17);
        out.close();
        try {
            read_velodyne_bin(path);
            FAIL("expected a truncation error");
        } catch (const io_error& e) {
            CHECK(std::string(e.what()).find("offset 16") != std::string::npos);
        }
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("16-bit depth png round trip") {
    const auto dir = tmp_dir();
    const auto path = dir / "depth.png";

    SparseDepthMap map(6, 4);
    map.at(0, 0) = 1.0;          // raw 256
    map.at(1, 2) = 25.5;         // raw 6528
    map.at(3, 5) = 255.99609375; // raw 65535
    write_depth_png16(map, path);
    const SparseDepthMap back = read_depth_png16(path);
    CHECK(back.at(0, 0) == 1.0);
    CHECK(back.at(1, 2) == 25.5);
    CHECK(back.at(0, 1) == 0.0); // raw 0 stays invalid
    CHECK(back.valid_count() == 3);

    // write(read(f)) reproduces the file byte for byte
    write_depth_png16(back, dir / "depth2.png");
    CHECK(slurp(path) == slurp(dir / "depth2.png"));

    SUBCASE("quantized values round trip exactly over a random map") {
        Rng rng(3);
        SparseDepthMap noisy(31, 17);
        for (double& d : noisy.depth)
            if (rng.uniform() < 0.5) d = std::floor(rng.uniform(1.0, 65535.0)) / 256.0;
        write_depth_png16(noisy, path);
        CHECK(read_depth_png16(path).depth == noisy.depth);
    }

    SUBCASE("non-png input is rejected") {
        Image img(4, 4);
        write_image_ppm(img, dir / "img.ppm");
        CHECK_THROWS(read_depth_png16(dir / "img.ppm"));
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("calibration parser") {
    const auto dir = tmp_dir();
    const auto path = dir / "calib.txt";

    SUBCASE("projection row and identity transform") {
        std::ofstream out(path);
        out << "P0: 1 0 0 0 0 1 0 0 0 0 1 0\n";
        out << "P2: 100 0 64 0 0 100 32 0 0 0 1 0\n";
        out << "Tr: 1 0 0 0 0 1 0 0 0 0 1 0\n";
        out.close();
        const auto [cam, pose] = read_calib(path, 128, 64);
        CHECK(cam.fx == 100.0);
        CHECK(cam.fy == 100.0);
        CHECK(cam.cx == 64.0);
        CHECK(cam.cy == 32.0);
        CHECK(cam.width == 128);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                CHECK(pose.rotation()(i, j) == (i == j ? 1.0 : 0.0));
        CHECK(pose.translation().x == 0.0);
    }

    SUBCASE("slightly off rotations are re-orthonormalized") {
        std::ofstream out(path);
        out << "P2: 100 0 64 0 0 100 32 0 0 0 1 0\n";
        out << "Tr_velo_to_cam: 1 1e-6 0 0.5 -1e-6 1 0 0 0 0 1 -0.08\n";
        out.close();
        const auto [cam, pose] = read_calib(path, 128, 64);
        const Mat3 gram = pose.rotation().transposed() * pose.rotation();
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                CHECK(std::fabs(gram(i, j) - (i == j ? 1.0 : 0.0)) < 1e-12);
        CHECK(pose.translation().z == -0.08);
    }

    SUBCASE("scaled rotation is rejected") {
        std::ofstream out(path);
        out << "P2: 100 0 64 0 0 100 32 0 0 0 1 0\n";
        out << "Tr: 2 0 0 0 0 2 0 0 0 0 2 0\n";
        out.close();
        CHECK_THROWS_AS(read_calib(path, 128, 64), io_error);
    }

    SUBCASE("missing keys are reported") {
        std::ofstream out(path);
        out << "P2: 100 0 64 0 0 100 32 0 0 0 1 0\n";
        out.close();
        try {
            read_calib(path, 128, 64);
            FAIL("expected an error");
        } catch (const io_error& e) {
            CHECK(std::string(e.what()).find("Tr") != std::string::npos);
        }
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("float32 raster round trip") {
    const auto dir = tmp_dir();
    const auto path = dir / "conf.raw";
    Rng rng(5);
    ConfidenceMap conf(13, 7);
    for (double& s : conf.sigma) s = static_cast<float>(rng.uniform(1.0, 20.0));
    write_confidence_raster(conf, path);
    const ConfidenceMap back = read_confidence_raster(path);
    CHECK(back.width == 13);
    CHECK(back.height == 7);
    CHECK(back.sigma == conf.sigma);

    write_confidence_raster(back, dir / "conf2.raw");
    CHECK(slurp(path) == slurp(dir / "conf2.raw"));

    SUBCASE("payload/header mismatch is rejected") {
        auto bytes = slurp(path);
        bytes.pop_back();
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << bytes;
        out.close();
        CHECK_THROWS_AS(read_confidence_raster(path), io_error);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("ppm and pbm round trips") {
    const auto dir = tmp_dir();
    Rng rng(9);
    Image img(10, 6);
    for (double& v : img.rgb) v = std::floor(rng.uniform(0, 256)) / 255.0;
    write_image_ppm(img, dir / "img.ppm");
    const Image back = read_image_ppm(dir / "img.ppm");
    CHECK(back.width == 10);
    for (std::size_t i = 0; i < img.rgb.size(); ++i)
        CHECK(back.rgb[i] == doctest::Approx(img.rgb[i]).epsilon(1e-12));

    std::vector<std::uint8_t> mask(10 * 6, 0);
    for (auto& m : mask) m = rng.uniform() < 0.3 ? 1 : 0;
    write_mask_pbm(mask, 10, 6, dir / "m.pbm");
    int w = 0, h = 0;
    CHECK(read_mask_pbm(dir / "m.pbm", w, h) == mask);
    CHECK(w == 10);
    CHECK(h == 6);
    std::filesystem::remove_all(dir);
}
