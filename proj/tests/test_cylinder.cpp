#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>
#include <random>

#include "cylwalk/cylinder.hpp"
#include "cylwalk/errors.hpp"
#include "cylwalk/rng.hpp"
#include "oracles.hpp"

using namespace cylwalk;

TEST_CASE("config validation rejects bad geometry") {
    CHECK_THROWS_AS((CylinderConfig{1, 2, 0.75}.validate()), ArgumentError);
    CHECK_THROWS_AS((CylinderConfig{2, 1, 0.75}.validate()), ArgumentError);
    CHECK_THROWS_AS((CylinderConfig{2, 2, 0.5}.validate()), ArgumentError);
    CHECK_THROWS_AS((CylinderConfig{2, 2, 1.0}.validate()), ArgumentError);
    CHECK_NOTHROW((CylinderConfig{2, 2, 0.75}.validate()));
    CHECK_NOTHROW((CylinderConfig{4, 3, 0.9}.validate()));
}

TEST_CASE("cross_size and torus packing round trip") {
    const CylinderConfig cfg{4, 3, 0.75};
    CHECK(cfg.cross_size() == 27);
    for (int t = 0; t < cfg.cross_size(); ++t) {
        const auto coords = torus_unpack(cfg, t);
        CHECK(static_cast<int>(coords.size()) == cfg.d - 1);
        CHECK(torus_pack(cfg, coords) == t);
    }
}

TEST_CASE("torus addition is componentwise mod L") {
    const CylinderConfig cfg{3, 4, 0.75};
    const int a = torus_pack(cfg, {3, 2});
    const int b = torus_pack(cfg, {2, 3});
    CHECK(torus_add(cfg, a, b) == torus_pack(cfg, {1, 1}));
    CHECK(torus_add(cfg, a, torus_neg(cfg, a)) == 0);
    for (int t = 0; t < cfg.cross_size(); ++t)
        CHECK(torus_add(cfg, t, torus_neg(cfg, t)) == 0);
}

TEST_CASE("kernel has the advertised masses and sums to one") {
    for (const auto& cfg : {CylinderConfig{2, 2, 0.75}, CylinderConfig{2, 5, 0.6},
                            CylinderConfig{3, 4, 0.9}, CylinderConfig{4, 2, 0.55}}) {
        const auto steps = neighbors(cfg, Site{3, 0});
        double total = 0.0;
        double up = 0.0, down = 0.0, lateral = 0.0;
        for (const auto& s : steps) {
            CHECK(s.prob > 0.0);
            total += s.prob;
            if (s.to.level == 4)
                up += s.prob;
            else if (s.to.level == 2)
                down += s.prob;
            else {
                CHECK(s.to.level == 3);
                lateral += s.prob;
            }
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(up == doctest::Approx(cfg.p / cfg.d));
        CHECK(down == doctest::Approx((1.0 - cfg.p) / cfg.d));
        CHECK(lateral == doctest::Approx(1.0 - 1.0 / cfg.d));
    }
}

TEST_CASE("two-site torus merges the lateral pair") {
    const CylinderConfig cfg{2, 2, 0.75};
    const auto steps = neighbors(cfg, Site{0, 0});
    CHECK(steps.size() == 3);  // up, down, one merged lateral
    for (const auto& s : steps)
        if (s.to.level == 0) {
            CHECK(s.to.torus == 1);
            CHECK(s.prob == doctest::Approx(0.5));
        }
}

TEST_CASE("neighbors are translation covariant on the torus") {
    const CylinderConfig cfg{3, 4, 0.8};
    const int shift = torus_pack(cfg, {1, 2});
    const auto base = neighbors(cfg, Site{0, 5});
    const auto moved = neighbors(cfg, Site{0, torus_add(cfg, 5, shift)});
    REQUIRE(base.size() == moved.size());
    std::map<std::pair<int, int>, double> expect;
    for (const auto& s : base)
        expect[{s.to.level, torus_add(cfg, s.to.torus, shift)}] = s.prob;
    for (const auto& s : moved) {
        auto it = expect.find({s.to.level, s.to.torus});
        REQUIRE(it != expect.end());
        CHECK(s.prob == doctest::Approx(it->second).epsilon(1e-15));
    }
}

TEST_CASE("sample_step frequencies match the kernel") {
    const CylinderConfig cfg{2, 3, 0.75};
    auto g = rng::stream(42, 0);
    const long N = 200000;
    std::map<std::pair<int, int>, long> counts;
    for (long i = 0; i < N; ++i) {
        const Site s = sample_step(cfg, Site{0, 1}, g);
        ++counts[{s.level, s.torus}];
    }
    for (const auto& s : neighbors(cfg, Site{0, 1})) {
        const double f =
            static_cast<double>(counts[{s.to.level, s.to.torus}]) / static_cast<double>(N);
        const double se = std::sqrt(s.prob * (1.0 - s.prob) / static_cast<double>(N));
        CHECK(std::abs(f - s.prob) < 4.0 * se);
    }
}

TEST_CASE("first passage matches the hand values on d=2 p=3/4") {
    const CylinderConfig cfg{2, 2, 0.75};
    CHECK(first_passage_prob(cfg, 1) ==
          doctest::Approx(oracle::frozen::first_passage_d2_p075_n1).epsilon(1e-14));
    CHECK(first_passage_prob(cfg, 3) ==
          doctest::Approx(oracle::frozen::first_passage_d2_p075_n3).epsilon(1e-14));
    CHECK(first_passage_limit(cfg) ==
          doctest::Approx(oracle::frozen::first_passage_d2_p075_lim).epsilon(1e-14));
}

TEST_CASE("first passage agrees with the absorbing-chain solve") {
    for (double p : {0.6, 0.75, 0.9}) {
        const CylinderConfig cfg{2, 2, p};
        for (int n = 1; n <= 20; ++n)
            CHECK(first_passage_prob(cfg, n) ==
                  doctest::Approx(oracle::first_passage(cfg, n)).epsilon(1e-10));
    }
}

TEST_CASE("first passage is decreasing in n with the stated limit") {
    for (const auto& cfg : {CylinderConfig{2, 2, 0.6}, CylinderConfig{3, 3, 0.75},
                            CylinderConfig{2, 4, 0.95}}) {
        double prev = first_passage_prob(cfg, 1);
        const double lim = first_passage_limit(cfg);
        const double r = (1.0 - cfg.p) / cfg.p;
        CHECK(lim == doctest::Approx((2.0 * cfg.p - 1.0) / cfg.d));
        for (int n = 2; n <= 40; ++n) {
            const double f = first_passage_prob(cfg, n);
            CHECK(f < prev + 1e-15);
            CHECK(f > lim - 1e-15);
            // f(n) = lim / (1 - r^n), so the gap decays geometrically
            CHECK(f - lim <= 2.0 * lim * std::pow(r, n) + 1e-15);
            prev = f;
        }
    }
}

TEST_CASE("first passage frequency within Monte Carlo error") {
    const CylinderConfig cfg{2, 2, 0.75};
    double se = 0.0;
    const double f = oracle::first_passage_mc(cfg, 3, 1000000, 1234, &se);
    CHECK(std::abs(f - first_passage_prob(cfg, 3)) < 3.0 * se);
}

TEST_CASE("first passage rejects n < 1") {
    const CylinderConfig cfg{2, 2, 0.75};
    CHECK_THROWS_AS(first_passage_prob(cfg, 0), ArgumentError);
}

TEST_CASE("rng streams are reproducible and index separated") {
    auto a1 = rng::stream(7, 3);
    auto a2 = rng::stream(7, 3);
    auto b = rng::stream(7, 4);
    CHECK(a1() == a2());
    CHECK(a1() != b());
    const double u = rng::uniform(a1);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    for (int i = 0; i < 1000; ++i) CHECK(rng::below(b, 7) < 7);
}
