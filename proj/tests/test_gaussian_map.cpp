#include <catch2/catch_amalgamated.hpp>

#include "garad/gaussian_map.hpp"
#include "test_helpers.hpp"

using namespace garad;
using Catch::Approx;

namespace {

// independent batch recomputation of the running statistics
struct BatchObs {
    Vec2 pixel;
    double depth;
    double reproj;
    std::optional<double> epipolar;
};

MotionStats batch_stats(const std::vector<BatchObs>& obs) {
    MotionStats s;
    s.observation_count = static_cast<int>(obs.size());
    double reproj_sum = 0.0, depth_sum = 0.0, epi_sum = 0.0;
    int epi_n = 0;
    for (const auto& o : obs) {
        reproj_sum += o.reproj;
        depth_sum += o.depth;
        if (o.epipolar) {
            epi_sum += *o.epipolar;
            ++epi_n;
        }
    }
    s.mean_reproj_error = reproj_sum / obs.size();
    s.mean_epipolar_distance = epi_n > 0 ? epi_sum / epi_n : 0.0;
    const double mean_depth = depth_sum / obs.size();
    double m2 = 0.0;
    for (const auto& o : obs) m2 += (o.depth - mean_depth) * (o.depth - mean_depth);
    s.depth_variation = obs.size() > 1 ? std::sqrt(m2 / (obs.size() - 1)) : 0.0;
    return s;
}

FrameObservations single_obs(int frame, std::int64_t id, const Vec2& px, double depth) {
    FrameObservations o;
    o.frame_id = frame;
    o.items.push_back({id, px, depth, true});
    return o;
}

}  // namespace

TEST_CASE("insert_from_features back-projects new gaussians") {
    Camera cam;
    cam.fx = cam.fy = 100.0;
    cam.cx = cam.cy = 50.0;
    cam.width = 200;
    cam.height = 100;
    GaussianMap map;
    const CameraPose id_pose = CameraPose::identity();

    SECTION("principal point insertion") {
        const auto created = map.insert_from_features(single_obs(0, 1, {50, 50}, 1.0), id_pose, cam);
        REQUIRE(created == std::vector<std::int64_t>{1});
        REQUIRE((map.get(1).position - Vec3(0, 0, 1)).norm() < 1e-12);
        REQUIRE(map.get(1).opacity == 0.5);
        REQUIRE(map.get(1).label == GaussianLabel::kStatic);
        REQUIRE(map.get(1).stats.observation_count == 1);
        REQUIRE(map.get(1).scale.x() == Approx(1.0 / 100.0));
    }
    SECTION("off-center pixel uses the pinhole model") {
        map.insert_from_features(single_obs(0, 2, {150, 50}, 2.0), id_pose, cam);
        const Vec3 p = map.get(2).position;
        REQUIRE(p.x() == Approx(2.0 * (150.0 - 50.0) / 100.0));
        REQUIRE(p.z() == Approx(2.0));
    }
    SECTION("already linked observations create nothing") {
        map.insert_from_features(single_obs(0, 7, {60, 60}, 1.5), id_pose, cam);
        const auto again = map.insert_from_features(single_obs(1, 7, {61, 60}, 1.5), id_pose, cam);
        REQUIRE(again.empty());
        REQUIRE(map.size() == 1);
    }
    SECTION("bad depth and out-of-bounds observations are rejected and counted") {
        FrameObservations obs;
        obs.items.push_back({10, {50, 50}, -1.0, true});
        obs.items.push_back({11, {500, 50}, 1.0, true});
        obs.items.push_back({12, {50, 50}, 1.0, true});
        int rejected = 0;
        const auto created = map.insert_from_features(obs, id_pose, cam, nullptr, &rejected);
        REQUIRE(created == std::vector<std::int64_t>{12});
        REQUIRE(rejected == 2);
        REQUIRE(map.total_rejected() == 2);
    }
}

TEST_CASE("accumulate_observation running statistics") {
    const Camera cam = testing::test_camera();
    GaussianMap map;
    const CameraPose pose = CameraPose::identity();
    map.insert_from_features(single_obs(0, 1, {80, 60}, 1.0), pose, cam);

    SECTION("gaussian on its ray keeps zero reprojection error") {
        const Vec2 px = project(pose, cam, map.get(1).position);
        for (int i = 0; i < 5; ++i) map.accumulate_observation(1, px, 1.0, pose, cam, pose, i + 1);
        REQUIRE(map.get(1).stats.mean_reproj_error == Approx(0.0).margin(1e-12));
        REQUIRE(map.get(1).stats.observation_count == 6);
    }
    SECTION("constant depths give zero depth variation") {
        for (int i = 0; i < 2; ++i) map.accumulate_observation(1, {80, 60}, 1.0, pose, cam, pose, i + 1);
        REQUIRE(map.get(1).stats.depth_variation == Approx(0.0).margin(1e-12));
    }
    SECTION("depths 1,2,3 give sample sigma 1") {
        map.accumulate_observation(1, {80, 60}, 2.0, pose, cam, pose, 1);
        map.accumulate_observation(1, {80, 60}, 3.0, pose, cam, pose, 2);
        REQUIRE(map.get(1).stats.depth_variation == Approx(1.0).epsilon(1e-12));
    }
    SECTION("unknown id throws") {
        REQUIRE_THROWS_AS(map.accumulate_observation(99, {0, 0}, 1.0, pose, cam, pose), Error);
    }
    SECTION("projection behind camera is skipped with diagnostic") {
        CameraPose behind;
        behind.translation = Vec3(0, 0, -5);  // pushes the point to negative z
        const auto& stats = map.accumulate_observation(1, {80, 60}, 1.0, behind, cam, pose, 1);
        REQUIRE(stats.observation_count == 1);
        REQUIRE(map.skipped_behind_camera() == 1);
    }
}

TEST_CASE("running statistics match batch recomputation") {
    auto rng = testing::make_rng(23);
    const Camera cam = testing::test_camera();
    GaussianMap map;

    // camera slides along +x so the epipolar geometry is non-degenerate
    std::vector<CameraPose> poses;
    for (int t = 0; t < 12; ++t) {
        CameraPose p;
        p.translation = Vec3(-0.1 * t, 0, 0);
        poses.push_back(p);
    }

    const Vec3 world(0.3, -0.2, 2.5);
    const Vec2 px0 = project(poses[0], cam, world);
    map.insert_from_features(single_obs(0, 5, px0, poses[0].transform(world).z()), poses[0], cam);

    std::vector<BatchObs> batch;
    batch.push_back({px0, poses[0].transform(world).z(), 0.0, std::nullopt});

    Vec2 prev_px = px0;
    for (int t = 1; t < 12; ++t) {
        const Vec2 noise(testing::normal(rng, 1.0), testing::normal(rng, 1.0));
        const Vec2 px = project(poses[t], cam, world) + noise;
        const double depth = poses[t].transform(world).z() + testing::normal(rng, 0.05);
        map.accumulate_observation(5, px, depth, poses[t], cam, poses[t - 1], t);

        BatchObs bo;
        bo.pixel = px;
        bo.depth = depth;
        bo.reproj = (px - project(poses[t], cam, map.get(5).position)).norm();
        const auto epi = compute_epipolar_distance(prev_px, px, relative_pose(poses[t], poses[t - 1]), cam);
        if (!epi.degenerate) bo.epipolar = epi.distance;
        batch.push_back(bo);
        prev_px = px;
    }

    const MotionStats expected = batch_stats(batch);
    const MotionStats& got = map.get(5).stats;
    REQUIRE(got.observation_count == expected.observation_count);
    REQUIRE(got.mean_reproj_error == Approx(expected.mean_reproj_error).margin(1e-9));
    REQUIRE(got.depth_variation == Approx(expected.depth_variation).margin(1e-9));
    REQUIRE(got.mean_epipolar_distance == Approx(expected.mean_epipolar_distance).margin(1e-9));
}

TEST_CASE("epipolar distance") {
    const Camera cam = testing::test_camera();
    auto rng = testing::make_rng(31);

    SECTION("static point satisfies the epipolar constraint") {
        for (int i = 0; i < 20; ++i) {
            const CameraPose a = testing::random_pose(rng, 0.5);
            const CameraPose b = testing::random_pose(rng, 0.5);
            const Vec3 world(testing::uniform(rng, -1, 1), testing::uniform(rng, -1, 1),
                             testing::uniform(rng, 2, 5));
            const auto pa = try_project(a, cam, world);
            const auto pb = try_project(b, cam, world);
            if (!pa || !pb) continue;
            const auto res = compute_epipolar_distance(*pa, *pb, relative_pose(b, a), cam);
            if (res.degenerate) continue;
            REQUIRE(res.distance < 1e-8);
        }
    }
    SECTION("perpendicular displacement reads back as the distance") {
        const CameraPose a;
        CameraPose b;
        b.translation = Vec3(-0.3, 0.05, 0);
        const Vec3 world(0.2, 0.1, 3.0);
        const Vec2 pa = project(a, cam, world);
        const Vec2 pb = project(b, cam, world);
        // build the epipolar line to find its normal direction
        const CameraPose rel = relative_pose(b, a);
        const Mat3 e = skew(rel.translation) * rel.rotation.toRotationMatrix();
        const Mat3 k_inv = cam.matrix().inverse();
        const Vec3 line = k_inv.transpose() * e * k_inv * Vec3(pa.x(), pa.y(), 1.0);
        const Vec2 normal = Vec2(line.x(), line.y()).normalized();
        const auto res = compute_epipolar_distance(pa, pb + 3.0 * normal, rel, cam);
        REQUIRE(res.distance == Approx(3.0).margin(1e-6));
    }
    SECTION("zero baseline is flagged degenerate") {
        const auto res = compute_epipolar_distance({10, 10}, {12, 10}, CameraPose::identity(), cam);
        REQUIRE(res.degenerate);
        REQUIRE(res.distance == 0.0);
    }
    SECTION("swapping frames with the transposed fundamental agrees at correspondences") {
        for (int i = 0; i < 20; ++i) {
            const CameraPose a = testing::random_pose(rng, 0.5);
            const CameraPose b = testing::random_pose(rng, 0.5);
            const Vec3 world(testing::uniform(rng, -1, 1), testing::uniform(rng, -1, 1),
                             testing::uniform(rng, 2, 5));
            const auto pa = try_project(a, cam, world);
            const auto pb = try_project(b, cam, world);
            if (!pa || !pb) continue;
            const auto fwd = compute_epipolar_distance(*pa, *pb, relative_pose(b, a), cam);
            const auto rev = compute_epipolar_distance(*pb, *pa, relative_pose(a, b), cam);
            if (fwd.degenerate || rev.degenerate) continue;
            REQUIRE(std::abs(fwd.distance - rev.distance) < 1e-6);
        }
    }
}

TEST_CASE("snapshot views") {
    const Camera cam = testing::test_camera();
    GaussianMap map;
    const CameraPose pose = CameraPose::identity();
    FrameObservations obs;
    for (int i = 0; i < 8; ++i) obs.items.push_back({i, Vec2(40 + i, 50), 2.0, true});
    map.insert_from_features(obs, pose, cam);
    for (int i = 5; i < 8; ++i) map.push_label(i, GaussianLabel::kDynamic);

    REQUIRE(GaussianMap().snapshot().empty());
    REQUIRE(map.snapshot(GaussianLabel::kStatic).size() == 5);
    const auto all = map.snapshot();
    REQUIRE(all.size() == 8);
    for (size_t i = 1; i < all.size(); ++i) REQUIRE(all[i - 1].id < all[i].id);
}

TEST_CASE("label history ring respects capacity") {
    const Camera cam = testing::test_camera();
    GaussianMap map(4);
    map.insert_from_features(single_obs(0, 1, {80, 60}, 1.0), CameraPose::identity(), cam);
    for (int i = 0; i < 10; ++i) map.push_label(1, GaussianLabel::kDynamic);
    REQUIRE(map.get(1).label_history.size() == 4);
}
