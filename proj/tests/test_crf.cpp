#include <catch2/catch_amalgamated.hpp>

#include "garad/crf.hpp"
#include "test_helpers.hpp"

using namespace garad;
using Catch::Approx;

namespace {

CrfFeatures feat(double reproj, double count, const Vec3& pos, const Vec2& px) {
    CrfFeatures f;
    f.reproj = reproj;
    f.obs_count = count;
    f.position = pos;
    f.pixel = px;
    return f;
}

// test-local re-derivation of the Gibbs energy, kept independent of the
// library implementation
double oracle_energy(const std::vector<int>& labels, const CrfProblem& p) {
    double e = 0.0;
    for (size_t i = 0; i < p.nodes.size(); ++i)
        e += labels[i] ? p.nodes[i].psi_dynamic : p.nodes[i].psi_static;
    for (size_t i = 0; i < p.nodes.size(); ++i) {
        for (size_t j = 0; j < i; ++j) {
            if (labels[i] == labels[j]) continue;
            const auto& fi = p.nodes[i].features;
            const auto& fj = p.nodes[j].features;
            const double app =
                std::exp(-std::pow(fi.reproj - fj.reproj, 2) / (2.0 * p.bandwidths.reproj * p.bandwidths.reproj) -
                         std::pow(fi.obs_count - fj.obs_count, 2) /
                             (2.0 * p.bandwidths.obs_count * p.bandwidths.obs_count));
            const double pos =
                std::exp(-(fi.position - fj.position).norm() / (2.0 * p.bandwidths.position * p.bandwidths.position) -
                         (fi.pixel - fj.pixel).norm() / (2.0 * p.bandwidths.pixel * p.bandwidths.pixel));
            e += p.omega_appearance * app + p.omega_position * pos;
        }
    }
    return e;
}

double exact_min_energy(const CrfProblem& p, std::vector<int>* argmin = nullptr) {
    const size_t n = p.nodes.size();
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> labels(n);
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
        for (size_t i = 0; i < n; ++i) labels[i] = (mask >> i) & 1u;
        const double e = gibbs_energy(labels, p);
        if (e < best) {
            best = e;
            if (argmin) *argmin = labels;
        }
    }
    return best;
}

CrfProblem random_problem(std::mt19937_64& rng, int n) {
    CrfProblem p;
    // neighborhood-normalized weights: total pairwise influence per node stays
    // comparable to the unaries, as in the pipeline's bandwidth-scaled regime
    const double scale = 4.0 / std::max(1, n - 1);
    p.omega_appearance = testing::uniform(rng, 0.2, 1.0) * scale;
    p.omega_position = testing::uniform(rng, 0.2, 1.0) * scale;
    p.bandwidths.reproj = testing::uniform(rng, 0.5, 2.0);
    p.bandwidths.obs_count = testing::uniform(rng, 0.5, 2.0);
    p.bandwidths.position = testing::uniform(rng, 0.5, 2.0);
    p.bandwidths.pixel = testing::uniform(rng, 0.5, 2.0);
    for (int i = 0; i < n; ++i) {
        CrfNode node;
        node.gaussian_id = i;
        const double u = testing::uniform(rng, 0.1, 0.9);
        node.psi_static = -std::log(u);
        node.psi_dynamic = -std::log(1.0 - u);
        node.features.reproj = testing::uniform(rng, 0, 4);
        node.features.obs_count = testing::uniform(rng, 0, 10);
        node.features.position.x() = testing::uniform(rng, -2, 2);
        node.features.position.y() = testing::uniform(rng, -2, 2);
        node.features.position.z() = testing::uniform(rng, -2, 2);
        node.features.pixel.x() = testing::uniform(rng, 0, 100);
        node.features.pixel.y() = testing::uniform(rng, 0, 100);
        p.nodes.push_back(node);
    }
    return p;
}

}  // namespace

TEST_CASE("potts gate") {
    REQUIRE(potts(0, 0) == 0);
    REQUIRE(potts(0, 1) == 1);
    REQUIRE(potts(1, 0) == 1);
    REQUIRE(potts(1, 1) == 0);
}

TEST_CASE("appearance kernel (squared distances)") {
    const auto a = feat(1.0, 5.0, Vec3::Zero(), Vec2::Zero());
    SECTION("identical features give 1") {
        REQUIRE(kernel_appearance(a, a, 0.7, 1.3) == Approx(1.0));
    }
    SECTION("one bandwidth apart in reproj only") {
        const auto b = feat(1.0 + 0.7, 5.0, Vec3::Zero(), Vec2::Zero());
        REQUIRE(kernel_appearance(a, b, 0.7, 1.3) == Approx(std::exp(-0.5)));
    }
    SECTION("both differences at one bandwidth") {
        const auto b = feat(1.0 + 0.7, 5.0 + 1.3, Vec3::Zero(), Vec2::Zero());
        REQUIRE(kernel_appearance(a, b, 0.7, 1.3) == Approx(std::exp(-1.0)));
    }
}

TEST_CASE("position kernel (unsquared distances)") {
    const auto a = feat(0, 0, Vec3::Zero(), Vec2::Zero());
    SECTION("identical positions give 1") {
        REQUIRE(kernel_position(a, a, 0.9, 2.0) == Approx(1.0));
    }
    SECTION("3d distance of 2 sigma^2 gives exp(-1)") {
        const double sp = 0.9;
        const auto b = feat(0, 0, Vec3(2.0 * sp * sp, 0, 0), Vec2::Zero());
        REQUIRE(kernel_position(a, b, sp, 2.0) == Approx(std::exp(-1.0)));
    }
    SECTION("tail decays to zero but stays positive") {
        const auto b = feat(0, 0, Vec3(500, 0, 0), Vec2::Zero());
        const double v = kernel_position(a, b, 0.9, 2.0);
        REQUIRE(v < 1e-30);
        REQUIRE(v >= 0.0);
    }
}

TEST_CASE("pairwise potential") {
    CrfProblem p;
    p.bandwidths = {1.0, 1.0, 1.0, 1.0};
    CrfNode n0, n1;
    n0.features = feat(0, 0, Vec3::Zero(), Vec2::Zero());
    n1.features = n0.features;
    p.nodes = {n0, n1};

    SECTION("equal labels are free regardless of kernels") {
        REQUIRE(pairwise_potential(0, 1, {0, 0}, p) == 0.0);
        REQUIRE(pairwise_potential(0, 1, {1, 1}, p) == 0.0);
    }
    SECTION("identical features with unit weights cost 2") {
        REQUIRE(pairwise_potential(0, 1, {0, 1}, p) == Approx(2.0));
    }
    SECTION("weighted kernel sum 0.5 + 0.25") {
        // appearance 0.5: squared reproj distance at 2 ln 2; position 0.25: distance at 2 ln 4
        p.nodes[1].features.reproj = std::sqrt(2.0 * std::log(2.0));
        p.nodes[1].features.position = Vec3(2.0 * std::log(4.0), 0, 0);
        REQUIRE(pairwise_potential(0, 1, {0, 1}, p) == Approx(0.75).epsilon(1e-12));
    }
    SECTION("symmetry") {
        auto rng = testing::make_rng(3);
        const CrfProblem q = random_problem(rng, 6);
        const std::vector<int> labels{0, 1, 1, 0, 1, 0};
        for (size_t i = 0; i < 6; ++i)
            for (size_t j = 0; j < 6; ++j)
                if (i != j)
                    REQUIRE(pairwise_potential(i, j, labels, q) == pairwise_potential(j, i, labels, q));
    }
}

TEST_CASE("gibbs energy") {
    SECTION("single node has no pairs") {
        CrfProblem p;
        CrfNode n;
        n.psi_static = 0.2;
        n.psi_dynamic = 0.9;
        p.nodes = {n};
        REQUIRE(gibbs_energy({0}, p) == Approx(0.2));
    }
    SECTION("equal labels reduce to the unary sum") {
        auto rng = testing::make_rng(4);
        CrfProblem p = random_problem(rng, 5);
        double unaries = 0.0;
        for (const auto& n : p.nodes) unaries += n.psi_dynamic;
        REQUIRE(gibbs_energy(std::vector<int>(5, 1), p) == Approx(unaries));
    }
    SECTION("matches the independent oracle on random instances") {
        auto rng = testing::make_rng(5);
        for (int trial = 0; trial < 25; ++trial) {
            CrfProblem p = random_problem(rng, 10);
            std::vector<int> labels(10);
            for (auto& l : labels) l = testing::uniform(rng, 0, 1) > 0.5 ? 1 : 0;
            REQUIRE(gibbs_energy(labels, p) == Approx(oracle_energy(labels, p)).epsilon(1e-12));
        }
    }
    SECTION("invariant under node reordering") {
        auto rng = testing::make_rng(6);
        CrfProblem p = random_problem(rng, 8);
        std::vector<int> labels{1, 0, 1, 1, 0, 0, 1, 0};
        const double e = gibbs_energy(labels, p);
        std::vector<size_t> perm{3, 1, 7, 0, 5, 2, 6, 4};
        CrfProblem q = p;
        std::vector<int> plabels(8);
        for (size_t i = 0; i < 8; ++i) {
            q.nodes[i] = p.nodes[perm[i]];
            plabels[i] = labels[perm[i]];
        }
        REQUIRE(gibbs_energy(plabels, q) == Approx(e).epsilon(1e-12));
    }
}

TEST_CASE("mean field inference") {
    SECTION("factorized case equals the unary softmax exactly") {
        auto rng = testing::make_rng(7);
        CrfProblem p = random_problem(rng, 8);
        p.omega_appearance = 0.0;
        p.omega_position = 0.0;
        const auto res = mean_field_infer(p, 5);
        for (size_t i = 0; i < p.nodes.size(); ++i) {
            const double expect =
                std::exp(-p.nodes[i].psi_dynamic) /
                (std::exp(-p.nodes[i].psi_dynamic) + std::exp(-p.nodes[i].psi_static));
            REQUIRE(res.marginals.q[i] == Approx(expect).margin(1e-12));
            const int unary_label = p.nodes[i].psi_dynamic < p.nodes[i].psi_static ? 1 : 0;
            REQUIRE(res.labels[i] == unary_label);
        }
    }
    SECTION("free energy is non-increasing per sweep") {
        auto rng = testing::make_rng(8);
        for (int trial = 0; trial < 30; ++trial) {
            CrfProblem p = random_problem(rng, 12);
            const auto res = mean_field_infer(p, 10);
            for (size_t k = 1; k < res.free_energy.size(); ++k)
                REQUIRE(res.free_energy[k] <= res.free_energy[k - 1] + 1e-9);
        }
    }
    SECTION("near-optimal on enumerable instances") {
        auto rng = testing::make_rng(9);
        int good = 0;
        const int trials = 100;
        for (int trial = 0; trial < trials; ++trial) {
            const int n = 2 + static_cast<int>(testing::uniform(rng, 0, 10.999));
            CrfProblem p = random_problem(rng, n);
            const double best = exact_min_energy(p);
            const auto res = mean_field_infer(p, 10);
            const double mf = gibbs_energy(res.labels, p);
            if (mf <= best * 1.05 + 1e-9) ++good;
        }
        INFO("instances within 5% of the exact minimum: " << good << "/" << trials);
        REQUIRE(good >= 90);
    }
    SECTION("strong attractive coupling pulls both nodes to the stronger unary") {
        CrfProblem p;
        CrfNode a, b;
        a.features = feat(0, 0, Vec3::Zero(), Vec2::Zero());
        b.features = a.features;  // identical features: kernel 1, coupling = 2
        a.psi_static = 0.1;  // strong preference for static
        a.psi_dynamic = 2.5;
        b.psi_static = 0.9;  // weak preference for dynamic
        b.psi_dynamic = 0.7;
        p.nodes = {a, b};
        const auto res = mean_field_infer(p, 10);
        REQUIRE(res.labels[0] == 0);
        REQUIRE(res.labels[1] == 0);
        // 4-case enumeration confirms the joint optimum
        std::vector<int> best_labels;
        exact_min_energy(p, &best_labels);
        REQUIRE(best_labels == res.labels);
    }
    SECTION("with zero pairwise weights argmax equals the per-node unary argmin") {
        auto rng = testing::make_rng(10);
        CrfProblem p = random_problem(rng, 12);
        p.omega_appearance = 0.0;
        p.omega_position = 0.0;
        const auto res = mean_field_infer(p, 5);
        for (size_t i = 0; i < p.nodes.size(); ++i)
            REQUIRE(res.labels[i] == (p.nodes[i].psi_dynamic < p.nodes[i].psi_static ? 1 : 0));
    }
}

TEST_CASE("window score") {
    std::deque<std::uint8_t> h;
    SECTION("all dynamic") {
        h.assign(11, 1);
        REQUIRE(window_score(h, 10) == Approx(1.0));
    }
    SECTION("all static") {
        h.assign(11, 0);
        REQUIRE(window_score(h, 10) == Approx(0.0));
    }
    SECTION("ten dynamic one static") {
        h.assign(10, 1);
        h.push_back(0);
        REQUIRE(window_score(h, 10) == Approx(10.0 / 11.0));
    }
    SECTION("short history uses what exists") {
        h.assign(3, 1);
        REQUIRE(window_score(h, 10) == Approx(1.0));
    }
    SECTION("empty history throws") { REQUIRE_THROWS_AS(window_score(h, 10), Error); }
}

TEST_CASE("retention") {
    const Camera cam = testing::test_camera();
    auto insert = [&](GaussianMap& map, std::int64_t id) {
        FrameObservations obs;
        obs.items.push_back({id, Vec2(80, 60), 2.0, true});
        map.insert_from_features(obs, CameraPose::identity(), cam);
    };

    SECTION("full dynamic window is deleted") {
        GaussianMap map(11);
        insert(map, 1);
        for (int i = 0; i < 11; ++i) map.push_label(1, GaussianLabel::kDynamic);
        const auto deleted = apply_retention(map, 10, 0.9);
        REQUIRE(deleted == std::vector<std::int64_t>{1});
        REQUIRE_FALSE(map.contains(1));
    }
    SECTION("one static relabel under a 0.95 threshold prevents deletion") {
        GaussianMap map(11);
        insert(map, 1);
        for (int i = 0; i < 10; ++i) map.push_label(1, GaussianLabel::kDynamic);
        map.push_label(1, GaussianLabel::kStatic);
        map.push_label(1, GaussianLabel::kDynamic);  // still dynamic now, score 10/11
        REQUIRE(apply_retention(map, 10, 0.95).empty());
        REQUIRE(map.contains(1));
    }
    SECTION("history shorter than the window is always retained") {
        GaussianMap map(11);
        insert(map, 1);
        for (int i = 0; i < 5; ++i) map.push_label(1, GaussianLabel::kDynamic);
        REQUIRE(apply_retention(map, 10, 0.5).empty());
        REQUIRE(map.contains(1));
    }
    SECTION("currently static gaussians are not deleted") {
        GaussianMap map(11);
        insert(map, 1);
        for (int i = 0; i < 11; ++i) map.push_label(1, GaussianLabel::kDynamic);
        map.push_label(1, GaussianLabel::kStatic);  // e.g. flow recovery flipped it back
        REQUIRE(apply_retention(map, 10, 0.9).empty());
    }
    SECTION("deletion does not mutate surviving unaries") {
        auto rng = testing::make_rng(11);
        CrfProblem p = random_problem(rng, 8);
        CrfProblem q;
        for (size_t i = 0; i < p.nodes.size(); ++i)
            if (i % 2 == 0) q.nodes.push_back(p.nodes[i]);
        q.bandwidths = p.bandwidths;
        for (size_t i = 0; i < q.nodes.size(); ++i) {
            REQUIRE(q.nodes[i].psi_static == p.nodes[2 * i].psi_static);
            REQUIRE(q.nodes[i].psi_dynamic == p.nodes[2 * i].psi_dynamic);
        }
    }
}

TEST_CASE("data-driven bandwidths fall back to 1 on degenerate spreads") {
    std::vector<CrfNode> nodes(5);
    for (auto& n : nodes) n.features = feat(1.0, 2.0, Vec3(1, 2, 3), Vec2(4, 5));
    const auto bw = default_bandwidths(nodes);
    REQUIRE(bw.reproj == 1.0);
    REQUIRE(bw.position == 1.0);
}
