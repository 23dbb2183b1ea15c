#include <catch2/catch_amalgamated.hpp>

#include "garad/core.hpp"
#include "garad/image.hpp"
#include "test_helpers.hpp"

#include <filesystem>

using namespace garad;
using Catch::Approx;

TEST_CASE("pose compose and inverse round-trip") {
    auto rng = testing::make_rng(7);
    for (int i = 0; i < 20; ++i) {
        const CameraPose a = testing::random_pose(rng);
        const CameraPose b = testing::random_pose(rng);
        const Vec3 x = testing::random_unit_vec3(rng) * testing::uniform(rng, 0.1, 5.0);
        REQUIRE(((a * b).transform(x) - a.transform(b.transform(x))).norm() < 1e-12);
        REQUIRE((a.inverse().transform(a.transform(x)) - x).norm() < 1e-12);
    }
}

TEST_CASE("projection basics") {
    const Camera cam = testing::test_camera(100, 100);
    Camera c2 = cam;
    c2.fx = c2.fy = 100.0;
    c2.cx = c2.cy = 50.0;
    const CameraPose id = CameraPose::identity();

    SECTION("principal point") {
        const Vec2 px = project(id, c2, Vec3(0, 0, 1));
        REQUIRE(px.x() == Approx(50.0));
        REQUIRE(px.y() == Approx(50.0));
    }
    SECTION("off-axis point") {
        const Vec2 px = project(id, c2, Vec3(0.5, 0, 1));
        REQUIRE(px.x() == Approx(100.0));
        REQUIRE(px.y() == Approx(50.0));
    }
    SECTION("behind camera throws") {
        REQUIRE_THROWS_AS(project(id, c2, Vec3(0, 0, -1)), Error);
        REQUIRE_FALSE(try_project(id, c2, Vec3(0, 0, -1)).has_value());
    }
}

TEST_CASE("back-projection then projection round-trips") {
    auto rng = testing::make_rng(11);
    const Camera cam = testing::test_camera();
    for (int i = 0; i < 50; ++i) {
        const CameraPose pose = testing::random_pose(rng);
        const Vec2 px(testing::uniform(rng, 0, cam.width - 1), testing::uniform(rng, 0, cam.height - 1));
        const double depth = testing::uniform(rng, 0.2, 8.0);
        const Vec3 world = back_project(pose, cam, px, depth);
        const Vec2 back = project(pose, cam, world);
        REQUIRE((back - px).norm() < 1e-9);
        REQUIRE(pose.transform(world).z() == Approx(depth).margin(1e-12));
    }
}

TEST_CASE("quat_exp matches angle-axis") {
    auto rng = testing::make_rng(13);
    for (int i = 0; i < 20; ++i) {
        const Vec3 axis = testing::random_unit_vec3(rng);
        const double angle = testing::uniform(rng, -3.0, 3.0);
        const Quat q = quat_exp(axis * angle);
        const Quat ref(Eigen::AngleAxisd(angle, axis));
        REQUIRE(std::min((q.coeffs() - ref.coeffs()).norm(), (q.coeffs() + ref.coeffs()).norm()) < 1e-12);
    }
}

TEST_CASE("image bilinear sampling is exact on a linear ramp") {
    Image img = Image::gray(8, 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) img.at(x, y) = 2.0 * x + 3.0 * y;
    REQUIRE(img.sample(2.5, 3.25) == Approx(2.0 * 2.5 + 3.0 * 3.25));
}

TEST_CASE("gaussian blur preserves constants and decimation halves size") {
    const Image c = Image::rgb(13, 9, 0.37);
    const Image blurred = gaussian_blur5(c);
    for (double v : blurred.data()) REQUIRE(v == Approx(0.37).epsilon(1e-12));
    const Image half = decimate2(c);
    REQUIRE(half.width() == 7);
    REQUIRE(half.height() == 5);
}

TEST_CASE("ppm and pgm round-trips") {
    const auto dir = std::filesystem::temp_directory_path() / "garad_core_io";
    std::filesystem::create_directories(dir);
    auto rng = testing::make_rng(17);

    Image rgb = Image::rgb(20, 14);
    for (auto& v : rgb.data()) v = testing::uniform(rng, 0, 1);
    write_ppm(rgb, dir / "x.ppm");
    const Image rgb2 = read_ppm(dir / "x.ppm");
    REQUIRE(rgb2.width() == 20);
    for (size_t i = 0; i < rgb.data().size(); ++i)
        REQUIRE(rgb2.data()[i] == Approx(rgb.data()[i]).margin(0.5 / 255.0 + 1e-12));

    Image depth = Image::gray(20, 14);
    for (auto& v : depth.data()) v = testing::uniform(rng, 0.1, 10.0);
    write_pgm16(depth, dir / "d.pgm", 5000.0);
    const Image depth2 = read_pgm16(dir / "d.pgm", 5000.0);
    for (size_t i = 0; i < depth.data().size(); ++i)
        REQUIRE(depth2.data()[i] == Approx(depth.data()[i]).margin(0.5 / 5000.0 + 1e-12));
}
