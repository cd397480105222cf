#include <random>

#include "bridge/masktools.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace bridge;
using testutil::complement;
using testutil::grids_equal;
using testutil::random_mask;
using testutil::subset;

TEST_CASE("morphology laws hold over many random masks") {
    std::mt19937_64 rng(51);
    for (int rep = 0; rep < 300; ++rep) {
        int h = 6 + (int)(rng() % 12), w = 6 + (int)(rng() % 12);
        Grid m = random_mask(rng, h, w);
        int r = 1 + (int)(rng() % 3);

        Grid d = dilate(m, r), e = erode(m, r);
        CHECK(is_binary(d));
        CHECK(is_binary(e));
        // extensivity / anti-extensivity
        CHECK(subset(m, d));
        CHECK(subset(e, m));
        // duality under complement
        CHECK(grids_equal(d, complement(erode(complement(m), r))));
        CHECK(grids_equal(e, complement(dilate(complement(m), r))));
        // Chebyshev balls compose: two unit steps equal one radius-2 step
        CHECK(grids_equal(dilate(dilate(m, 1), 1), dilate(m, 2)));
        CHECK(grids_equal(erode(erode(m, 1), 1), erode(m, 2)));
        // monotonicity in the radius
        CHECK(subset(dilate(m, r), dilate(m, r + 1)));
        CHECK(subset(erode(m, r + 1), erode(m, r)));
        // radius zero is the identity
        CHECK(grids_equal(dilate(m, 0), m));
        CHECK(grids_equal(erode(m, 0), m));
    }
}

TEST_CASE("dilation oracle on a single pixel") {
    Grid m(1, 7, 7);
    m.at(0, 3, 3) = 1.0;
    Grid d = dilate(m, 2);
    for (int y = 0; y < 7; ++y)
        for (int x = 0; x < 7; ++x)
            CHECK(d.at(0, y, x) ==
                  ((std::abs(y - 3) <= 2 && std::abs(x - 3) <= 2) ? 1.0 : 0.0));
    // erosion of the dilation recovers the pixel (opening-style identity here)
    CHECK(grids_equal(erode(d, 2), m));
}

TEST_CASE("gaussian blur: sigma zero is the identity, mass stays bounded") {
    std::mt19937_64 rng(52);
    Grid g = testutil::random_image(rng, 1, 9, 11);
    CHECK(grids_equal(gaussian_blur(g, 0.0), g));
    Grid b = gaussian_blur(g, 1.3);
    for (double v : b.v) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0 + 1e-12);
    }
}

TEST_CASE("perturbed masks stay binary and contain the eroded truth") {
    std::mt19937_64 rng(53);
    for (int rep = 0; rep < 200; ++rep) {
        Grid truth = random_mask(rng, 16, 16);
        PerturbParams pp;
        pp.seed = rng();
        Grid coarse = perturb_mask(truth, pp);
        CHECK(is_binary(coarse));
        CHECK(subset(erode(truth, 1), coarse));
    }
}

TEST_CASE("forced composite: hard paste at sigma 0, source beyond the feather radius") {
    std::mt19937_64 rng(54);
    for (int rep = 0; rep < 100; ++rep) {
        Grid src = testutil::random_image(rng, 3, 16, 16);
        Grid tgt = testutil::random_image(rng, 3, 16, 16);
        Grid m = random_mask(rng, 16, 16);

        Grid hard = forced_composite(src, tgt, m, 0.0);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 16; ++y)
                for (int x = 0; x < 16; ++x)
                    CHECK(hard.at(c, y, x) ==
                          (m.at(0, y, x) == 1.0 ? tgt.at(c, y, x) : src.at(c, y, x)));

        double sigma = 0.8;
        int radius = (int)std::ceil(3.0 * sigma);
        Grid soft = forced_composite(src, tgt, m, sigma);
        Grid reach = dilate(m, radius);  // support of the truncated kernel
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 16; ++y)
                for (int x = 0; x < 16; ++x)
                    if (reach.at(0, y, x) == 0.0)
                        CHECK(soft.at(c, y, x) == src.at(c, y, x));
    }
}

TEST_CASE("seam score is zero for identical images and positive for a hard edge") {
    std::mt19937_64 rng(55);
    for (int rep = 0; rep < 100; ++rep) {
        Grid src = testutil::random_image(rng, 3, 12, 12);
        Grid m = random_mask(rng, 12, 12);
        CHECK(seam_score(src, src, m, 2) == 0.0);
    }
    Grid src(3, 12, 12);
    Grid tgt(3, 12, 12);
    for (auto& v : tgt.v) v = 1.0;
    Grid m(1, 12, 12);
    for (int y = 4; y < 8; ++y)
        for (int x = 4; x < 8; ++x) m.at(0, y, x) = 1.0;
    Grid comp = forced_composite(src, tgt, m, 0.0);
    CHECK(seam_score(comp, src, m, 2) > 0.0);
}

TEST_CASE("dual audit applies strict thresholds") {
    AuditThresholds th;  // d_obj > 0.25, d_bg < 0.6
    CHECK(dual_audit_filter(0.3, 0.2, th).keep);
    CHECK_FALSE(dual_audit_filter(0.25, 0.2, th).keep);   // boundary rejected
    CHECK_FALSE(dual_audit_filter(0.3, 0.6, th).keep);    // boundary rejected
    CHECK(dual_audit_filter(0.2500001, 0.5999999, th).keep);
    CHECK_FALSE(dual_audit_filter(0.1, 0.7, th).keep);
    CHECK(!dual_audit_filter(0.1, 0.2, th).reason.empty());

    // confidence gate only applies when supplied
    CHECK(dual_audit_filter(0.3, 0.2, th, std::nullopt).keep);
    CHECK(dual_audit_filter(0.3, 0.2, th, 0.95).keep);
    CHECK_FALSE(dual_audit_filter(0.3, 0.2, th, 0.9).keep);
}

TEST_CASE("candidate ranking: prefilter, normalization, ties and top-k") {
    SUBCASE("single candidate ranks first") {
        RankResult r = rank_candidates({{7, 0.5, 0.1}}, 1);
        REQUIRE(r.ordered.size() == 1);
        CHECK(r.ordered[0].id == 7);
        CHECK(r.ordered[0].rank == 1);
        CHECK(r.ordered[0].top_k);
        CHECK_FALSE(r.short_of_k);
    }
    SUBCASE("background prefilter is strict at 0.4") {
        RankResult r = rank_candidates({{1, 0.1, 0.39}, {2, 0.1, 0.4}, {3, 0.1, 0.41}}, 2);
        REQUIRE(r.ordered.size() == 1);
        CHECK(r.ordered[0].id == 1);
        CHECK(r.prefiltered_ids == std::vector<int64_t>{2, 3});
        CHECK(r.short_of_k);
    }
    SUBCASE("ordering follows the documented composite with index tiebreak") {
        std::vector<RankCandidate> cands = {
            {0, 0.9, 0.30}, {1, 0.2, 0.10}, {2, 0.5, 0.20}, {3, 0.2, 0.10}};
        RankResult r = rank_candidates(cands, 2);
        REQUIRE(r.ordered.size() == 4);
        // candidates 1 and 3 tie on the best score; input order breaks the tie
        CHECK(r.ordered[0].id == 1);
        CHECK(r.ordered[1].id == 3);
        CHECK(r.ordered[2].id == 2);
        CHECK(r.ordered[3].id == 0);
        for (size_t i = 0; i < 4; ++i) CHECK(r.ordered[i].rank == (int)i + 1);
        CHECK(r.ordered[0].top_k);
        CHECK(r.ordered[1].top_k);
        CHECK_FALSE(r.ordered[2].top_k);
        // recompute the composite independently
        auto norm = [](double v, double lo, double hi) {
            return hi > lo ? (v - lo) / (hi - lo) : 0.0;
        };
        for (const auto& c : r.ordered) {
            double ns = norm(1.0 - c.seam, 1.0 - 0.9, 1.0 - 0.2);
            double nb = norm(1.0 - c.bg, 1.0 - 0.30, 1.0 - 0.10);
            CHECK(c.composite == doctest::Approx(0.5 * (ns + nb)).epsilon(1e-12));
        }
    }
    SUBCASE("degenerate normalization collapses every candidate to the same score") {
        RankResult r = rank_candidates({{0, 0.3, 0.2}, {1, 0.3, 0.2}}, 1);
        REQUIRE(r.ordered.size() == 2);
        CHECK(r.ordered[0].composite == r.ordered[1].composite);
        CHECK(r.ordered[0].composite == 1.0);
        CHECK(r.ordered[0].id == 0);  // tie broken by input index
    }
    SUBCASE("randomized ordering property") {
        std::mt19937_64 rng(56);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int rep = 0; rep < 300; ++rep) {
            std::vector<RankCandidate> cands;
            int n = 2 + (int)(rng() % 8);
            for (int i = 0; i < n; ++i) cands.push_back({i, u(rng), 0.39 * u(rng)});
            RankResult r = rank_candidates(cands, 3);
            REQUIRE((int)r.ordered.size() == n);
            for (size_t i = 1; i < r.ordered.size(); ++i) {
                bool ok = r.ordered[i - 1].composite > r.ordered[i].composite ||
                          (r.ordered[i - 1].composite == r.ordered[i].composite &&
                           r.ordered[i - 1].id < r.ordered[i].id);
                CHECK(ok);
            }
        }
    }
}
