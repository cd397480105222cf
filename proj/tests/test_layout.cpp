#include <random>

#include "bridge/grid.hpp"
#include "bridge/layout.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace bridge;

TEST_CASE("mask_to_bbox rounds outward to patch multiples") {
    Grid m(1, 8, 8);
    m.at(0, 2, 1) = 1.0;
    m.at(0, 5, 3) = 1.0;
    BBox b = mask_to_bbox(m, 2);
    CHECK(b == BBox{2, 0, 6, 4});

    Grid m2(1, 8, 8);
    m2.at(0, 1, 1) = 1.0;
    CHECK(mask_to_bbox(m2, 4) == BBox{0, 0, 4, 4});

    Grid empty(1, 8, 8);
    CHECK_THROWS_AS((void)mask_to_bbox(empty, 2), DataError);
}

TEST_CASE("mask_to_bbox is minimal against brute force") {
    std::mt19937_64 rng(31);
    for (int rep = 0; rep < 200; ++rep) {
        int h = 8 + 2 * (int)(rng() % 5), w = 8 + 2 * (int)(rng() % 5);
        Grid m = testutil::random_mask(rng, h, w);
        for (int patch : {1, 2}) {
            if (h % patch || w % patch) continue;
            BBox b = mask_to_bbox(m, patch);
            int top = h, left = w, bot = -1, right = -1;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    if (m.at(0, y, x) != 0.0) {
                        top = std::min(top, y);
                        left = std::min(left, x);
                        bot = std::max(bot, y);
                        right = std::max(right, x);
                    }
            BBox want{top / patch * patch, left / patch * patch,
                      (bot / patch + 1) * patch, (right / patch + 1) * patch};
            CHECK(b == want);
        }
    }
}

TEST_CASE("path layout token counts and index ranges") {
    BBox b{8, 8, 16, 16};
    PathLayout l = build_layout(32, 32, b, 2);
    CHECK(l.main_rows == 16);
    CHECK(l.main_cols == 16);
    CHECK(l.main_tokens() == 256);
    CHECK(l.sub_rows == 4);
    CHECK(l.sub_cols == 4);
    CHECK(l.subject_tokens() == 16);
    CHECK(l.visual_tokens() == 272);
    CHECK(l.subject_start() == 256);

    l.include_subject = false;
    CHECK(l.subject_tokens() == 0);
    CHECK(l.visual_tokens() == 256);
}

TEST_CASE("coordinate frames: main, subject-local base, background-anchored swap") {
    BBox b{8, 8, 16, 16};
    PathLayout l = build_layout(32, 32, b, 2);
    CHECK(l.main_coord(0) == PECoord{0, 0, 0});
    CHECK(l.main_coord(17) == PECoord{0, 1, 1});
    CHECK(l.pe_base(0) == PECoord{1, 0, 0});
    CHECK(l.pe_base(5) == PECoord{1, 1, 1});
    CHECK(l.pe_swap(0) == PECoord{0, 4, 4});
    CHECK(l.pe_swap(5) == PECoord{0, 5, 5});

    // swap coordinates coincide with the covered main-path token coordinates
    for (int i = 0; i < l.subject_tokens(); ++i) {
        PECoord s = l.pe_swap(i);
        int main_idx = s.row * l.main_cols + s.col;
        CHECK(l.main_coord(main_idx) == s);
        // base coordinates live on a separate frame, never colliding with main
        CHECK(l.pe_base(i).frame == 1);
    }
}

TEST_CASE("bbox_mask rasterizes the box and crop extracts it") {
    BBox b{2, 4, 6, 8};
    Grid m = bbox_mask(b, 10, 12);
    CHECK(m.channels == 1);
    CHECK(is_binary(m));
    double sum = 0;
    for (double v : m.v) sum += v;
    CHECK(sum == 16.0);
    CHECK(m.at(0, 2, 4) == 1.0);
    CHECK(m.at(0, 5, 7) == 1.0);
    CHECK(m.at(0, 1, 4) == 0.0);
    CHECK(m.at(0, 2, 8) == 0.0);

    std::mt19937_64 rng(32);
    Grid g = testutil::random_image(rng, 3, 10, 12);
    Grid c = crop(g, b);
    CHECK(c.height == 4);
    CHECK(c.width == 4);
    for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x)
                CHECK(c.at(ch, y, x) == g.at(ch, y + 2, x + 4));
}

TEST_CASE("patchify / depatchify round-trip and ordering") {
    std::mt19937_64 rng(33);
    Grid g = testutil::random_image(rng, 3, 12, 8);
    Tensor<double> t = patchify<double>(g, 2);
    CHECK(t.shape == Shape{24, 12});
    // token 0 starts with channel 0 of the top-left 2x2 patch, row-major
    CHECK(t[0] == g.at(0, 0, 0));
    CHECK(t[1] == g.at(0, 0, 1));
    CHECK(t[2] == g.at(0, 1, 0));
    CHECK(t[4] == g.at(1, 0, 0));
    Grid back = depatchify(t, 3, 12, 8, 2);
    CHECK(testutil::grids_equal(g, back));

    CHECK_THROWS_AS((void)patchify<double>(g, 5), ShapeError);
}
