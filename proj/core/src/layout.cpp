#include "bridge/layout.hpp"

#include "bridge/errors.hpp"

namespace bridge {

BBox mask_to_bbox(const Grid& mask, int patch) {
    if (mask.channels != 1) throw DataError("mask_to_bbox: mask must be 1-channel");
    if (!is_binary(mask)) throw DataError("mask_to_bbox: mask must be binary");
    if (patch <= 0 || mask.height % patch != 0 || mask.width % patch != 0)
        throw DataError("mask_to_bbox: patch must divide image dims");
    int top = mask.height, left = mask.width, bottom = -1, right = -1;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(0, y, x) != 0.0) {
                top = std::min(top, y);
                left = std::min(left, x);
                bottom = std::max(bottom, y);
                right = std::max(right, x);
            }
    if (bottom < 0) throw DataError("mask_to_bbox: empty mask");
    BBox b;
    b.top = (top / patch) * patch;
    b.left = (left / patch) * patch;
    b.bottom = ((bottom / patch) + 1) * patch;
    b.right = ((right / patch) + 1) * patch;
    return b;
}

PathLayout build_layout(int image_h, int image_w, const BBox& bbox, int patch) {
    if (patch <= 0 || image_h % patch != 0 || image_w % patch != 0)
        throw DataError("build_layout: patch must divide image dims");
    if (bbox.top % patch || bbox.left % patch || bbox.bottom % patch || bbox.right % patch)
        throw DataError("build_layout: bbox is not patch-aligned");
    if (bbox.top < 0 || bbox.left < 0 || bbox.bottom > image_h || bbox.right > image_w ||
        bbox.height() <= 0 || bbox.width() <= 0)
        throw DataError("build_layout: bbox outside image or degenerate");
    PathLayout l;
    l.image_h = image_h;
    l.image_w = image_w;
    l.patch = patch;
    l.main_rows = image_h / patch;
    l.main_cols = image_w / patch;
    l.sub_rows = bbox.height() / patch;
    l.sub_cols = bbox.width() / patch;
    l.bbox = bbox;
    return l;
}

Grid bbox_mask(const BBox& b, int image_h, int image_w) {
    Grid m(1, image_h, image_w);
    for (int y = b.top; y < b.bottom; ++y)
        for (int x = b.left; x < b.right; ++x) m.at(0, y, x) = 1.0;
    return m;
}

Grid crop(const Grid& g, const BBox& b) {
    if (b.top < 0 || b.left < 0 || b.bottom > g.height || b.right > g.width ||
        b.height() <= 0 || b.width() <= 0)
        throw DataError("crop: bbox outside grid");
    Grid c(g.channels, b.height(), b.width());
    for (int ch = 0; ch < g.channels; ++ch)
        for (int y = 0; y < c.height; ++y)
            for (int x = 0; x < c.width; ++x) c.at(ch, y, x) = g.at(ch, b.top + y, b.left + x);
    return c;
}

}  // namespace bridge
