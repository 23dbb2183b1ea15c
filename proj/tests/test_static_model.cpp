#include <catch2/catch_amalgamated.hpp>

#include "garad/static_model.hpp"
#include "test_helpers.hpp"

using namespace garad;
using Catch::Approx;

namespace {

MotionStats make_stats(double reproj, double depth_var, int count, double epi) {
    MotionStats s;
    s.mean_reproj_error = reproj;
    s.depth_variation = depth_var;
    s.observation_count = count;
    s.mean_epipolar_distance = epi;
    return s;
}

StaticStatModel unit_model() {
    StaticStatModel m;
    for (auto& c : m.components) {
        c.mean = 1.0;
        c.variance = 1.0;
    }
    m.fitted = true;
    return m;
}

}  // namespace

TEST_CASE("fit_static_model") {
    SECTION("degenerate identical samples hit the variance floor") {
        std::vector<MotionStats> samples(8, make_stats(1.0, 0.0, 5, 0.0));
        const auto model = fit_static_model(samples);
        REQUIRE(model.components[0].mean == Approx(1.0));
        REQUIRE(model.components[0].variance == Approx(StaticStatModel::kVarianceFloor));
    }
    SECTION("alternating 0/2 reproj errors give sample variance 8/7") {
        std::vector<MotionStats> samples;
        for (int i = 0; i < 8; ++i) samples.push_back(make_stats(i % 2 == 0 ? 0.0 : 2.0, 0, 1, 0));
        const auto model = fit_static_model(samples);
        REQUIRE(model.components[0].mean == Approx(1.0));
        REQUIRE(model.components[0].variance == Approx(8.0 / 7.0));
    }
    SECTION("weights stay uniform") {
        std::vector<MotionStats> samples(10, make_stats(0.5, 0.1, 4, 0.2));
        const auto model = fit_static_model(samples);
        for (int k = 0; k < 4; ++k) REQUIRE(model.weights[k] == Approx(0.25));
        REQUIRE(model.weights.sum() == Approx(1.0).margin(1e-12));
    }
    SECTION("too few samples is an error") {
        std::vector<MotionStats> samples(7);
        REQUIRE_THROWS_AS(fit_static_model(samples), Error);
    }
}

TEST_CASE("component_density is the peak-normalized gaussian") {
    const auto model = unit_model();
    REQUIRE(component_density(1.0, 0, model) == Approx(1.0));
    REQUIRE(component_density(2.0, 0, model) == Approx(std::exp(-0.5)));
    REQUIRE(component_density(31.0, 0, model) > 0.0);  // 30 sigma: deep tail, still representable
    REQUIRE(component_density(31.0, 0, model) < 1e-100);
}

TEST_CASE("static_probability") {
    const auto model = unit_model();
    SECTION("all statistics at the means give probability 1") {
        REQUIRE(static_probability(make_stats(1, 1, 1, 1), model) == Approx(1.0));
    }
    SECTION("one sigma out on every statistic gives exp(-1/2)") {
        REQUIRE(static_probability(make_stats(2, 2, 2, 2), model) == Approx(std::exp(-0.5)));
    }
    SECTION("ten sigma out is vanishing but positive") {
        const double p = static_probability(make_stats(11, 11, 11, 11), model);
        REQUIRE(p < 1e-10);
        REQUIRE(p > 0.0);
    }
    SECTION("monotone decay away from a component mean") {
        double prev = 2.0;
        for (double x = 1.0; x < 6.0; x += 0.25) {
            const double p = static_probability(make_stats(x, 1, 1, 1), model);
            REQUIRE(p <= prev + 1e-15);
            prev = p;
        }
    }
    SECTION("affine reparameterization invariance") {
        // the count statistic is integral, so it sits at weight 0 here and the
        // three continuous statistics carry the transform
        auto rng = testing::make_rng(5);
        for (int trial = 0; trial < 20; ++trial) {
            const double a = testing::uniform(rng, 0.1, 10.0);
            const double b = testing::uniform(rng, -5.0, 5.0);
            StaticStatModel m = unit_model();
            m.weights = Vec4(1.0 / 3, 1.0 / 3, 0.0, 1.0 / 3);
            StaticStatModel m2 = m;
            const MotionStats s = make_stats(testing::uniform(rng, 0, 3), testing::uniform(rng, 0, 3),
                                             2, testing::uniform(rng, 0, 3));
            MotionStats s2 = s;
            s2.mean_reproj_error = a * s.mean_reproj_error + b;
            s2.depth_variation = a * s.depth_variation + b;
            s2.mean_epipolar_distance = a * s.mean_epipolar_distance + b;
            for (int k = 0; k < 4; ++k) {
                m2.components[k].mean = a * m.components[k].mean + b;
                m2.components[k].variance = a * a * m.components[k].variance;
            }
            REQUIRE(static_probability(s2, m2) == Approx(static_probability(s, m)).margin(1e-12));
        }
    }
}

TEST_CASE("unary_potential") {
    auto model = unit_model();
    SECTION("perfect static evidence has zero static cost") {
        const auto u = unary_potential(make_stats(1, 1, 1, 1), model);
        REQUIRE(u.psi_static == Approx(0.0).margin(1e-12));
        REQUIRE(u.psi_dynamic > 10.0);
        REQUIRE(std::isfinite(u.psi_dynamic));
    }
    SECTION("log inversion") {
        // P = exp(-2) at sqrt(2 * 2) = 2 sigma on a single active component
        StaticStatModel m = unit_model();
        m.weights = Vec4(1.0, 0.0, 0.0, 0.0);
        const auto u = unary_potential(make_stats(3.0, 1, 1, 1), m);
        REQUIRE(u.psi_static == Approx(2.0).epsilon(1e-9));
    }
    SECTION("midpoint is symmetric up to the epsilon guard") {
        StaticStatModel m = unit_model();
        m.weights = Vec4(1.0, 0.0, 0.0, 0.0);
        const double x = 1.0 + std::sqrt(2.0 * std::log(2.0));  // density exp(-log 2) = 0.5
        const auto u = unary_potential(make_stats(x, 1, 1, 1), m);
        REQUIRE(u.psi_static == Approx(std::log(2.0)).epsilon(1e-9));
        REQUIRE(u.psi_dynamic == Approx(-std::log(0.5 + 1e-6)).epsilon(1e-9));
    }
    SECTION("label preference flips exactly at the probability crossing") {
        StaticStatModel m = unit_model();
        m.weights = Vec4(1.0, 0.0, 0.0, 0.0);
        // bisection on x for psi_static(x) == psi_dynamic(x)
        double lo = 1.0, hi = 6.0;
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            const auto u = unary_potential(make_stats(mid, 1, 1, 1), m);
            if (u.psi_static < u.psi_dynamic) lo = mid;
            else hi = mid;
        }
        // crossing happens where P = (1 + eps) / 2
        const double p_cross = static_probability(make_stats(0.5 * (lo + hi), 1, 1, 1), m);
        REQUIRE(p_cross == Approx((1.0 + kUnaryEpsilon) / 2.0).margin(1e-9));
        const auto below = unary_potential(make_stats(lo - 1e-6, 1, 1, 1), m);
        const auto above = unary_potential(make_stats(hi + 1e-6, 1, 1, 1), m);
        REQUIRE(below.psi_static < below.psi_dynamic);
        REQUIRE(above.psi_static > above.psi_dynamic);
    }
    SECTION("both potentials stay finite in the far tail") {
        const auto u = unary_potential(make_stats(1e6, 1e6, 1, 1e6), model);
        REQUIRE(std::isfinite(u.psi_static));
        REQUIRE(std::isfinite(u.psi_dynamic));
        REQUIRE(u.psi_static >= 0.0);
        REQUIRE(u.psi_dynamic >= 0.0);
    }
}
