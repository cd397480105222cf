#pragma once

#include <vector>

#include "bridge/grid.hpp"

namespace bridge {

// Coordinate triple consumed by the 3-axis rotary embedding.
// Frame conventions: 0 = main canvas, 1 = subject canvas, 2 = source context,
// 3+j = text token j.
struct PECoord {
    int frame = 0;
    int row = 0;
    int col = 0;
    bool operator==(const PECoord&) const = default;
};

// Half-open pixel bbox; all edges are multiples of the patch size.
struct BBox {
    int top = 0, left = 0, bottom = 0, right = 0;
    int height() const { return bottom - top; }
    int width() const { return right - left; }
    bool operator==(const BBox&) const = default;
};

// Token bookkeeping for one dual-path sample: a main-canvas token grid plus a
// subject token grid over the bbox, appended after the main tokens.
struct PathLayout {
    int image_h = 0, image_w = 0, patch = 0;
    int main_rows = 0, main_cols = 0;
    int sub_rows = 0, sub_cols = 0;
    BBox bbox;
    bool include_subject = true;  // false for the subject-free ablation

    int main_tokens() const { return main_rows * main_cols; }
    int subject_tokens() const { return include_subject ? sub_rows * sub_cols : 0; }
    int visual_tokens() const { return main_tokens() + subject_tokens(); }
    // subject index range within the concatenated main+subject sequence
    int subject_start() const { return main_tokens(); }

    PECoord main_coord(int i) const { return {0, i / main_cols, i % main_cols}; }
    // subject-canvas coordinates: bbox-local origin on frame 1
    PECoord pe_base(int i) const { return {1, i / sub_cols, i % sub_cols}; }
    // background-anchored coordinates of the main-path token under the same patch
    PECoord pe_swap(int i) const {
        return {0, bbox.top / patch + i / sub_cols, bbox.left / patch + i % sub_cols};
    }
};

// Tight pixel bbox of the nonzero mask region, rounded outward to patch
// multiples. Empty masks are rejected (callers decide the fallback).
BBox mask_to_bbox(const Grid& mask, int patch);

PathLayout build_layout(int image_h, int image_w, const BBox& bbox, int patch);

// Rasterize the bbox as a 1-channel pixel mask.
Grid bbox_mask(const BBox& b, int image_h, int image_w);

// Extract the bbox window (all channels). The bbox must lie inside the grid.
Grid crop(const Grid& g, const BBox& b);

}  // namespace bridge
