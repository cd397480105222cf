#include "bridge/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bridge/errors.hpp"

namespace bridge {

RegionMetrics region_metrics(const Grid& generated, const Grid& reference, const BBox& bbox) {
    if (!generated.same_dims(reference)) throw ShapeError("region_metrics: dims differ");
    if (bbox.top < 0 || bbox.left < 0 || bbox.bottom > generated.height ||
        bbox.right > generated.width || bbox.height() <= 0 || bbox.width() <= 0)
        throw DataError("region_metrics: invalid bbox");
    RegionMetrics m;
    int64_t nloc = 0, nglob = 0;
    for (int c = 0; c < generated.channels; ++c)
        for (int y = 0; y < generated.height; ++y)
            for (int x = 0; x < generated.width; ++x) {
                double d = generated.at(c, y, x) - reference.at(c, y, x);
                m.global_l1 += std::abs(d);
                m.global_l2 += d * d;
                ++nglob;
                if (y >= bbox.top && y < bbox.bottom && x >= bbox.left && x < bbox.right) {
                    m.local_l1 += std::abs(d);
                    m.local_l2 += d * d;
                    ++nloc;
                }
            }
    m.global_l1 /= (double)nglob;
    m.global_l2 /= (double)nglob;
    m.local_l1 /= (double)nloc;
    m.local_l2 /= (double)nloc;
    return m;
}

std::vector<double> patch_embed(const Grid& g) {
    constexpr int cells = 4;
    std::vector<double> feat;
    feat.reserve((size_t)cells * cells * g.channels * 3);
    auto gradmag = [&](int c, int y, int x) {
        int xm = std::max(x - 1, 0), xp = std::min(x + 1, g.width - 1);
        int ym = std::max(y - 1, 0), yp = std::min(y + 1, g.height - 1);
        double gx = (g.at(c, y, xp) - g.at(c, y, xm)) / 2.0;
        double gy = (g.at(c, yp, x) - g.at(c, ym, x)) / 2.0;
        return std::sqrt(gx * gx + gy * gy);
    };
    for (int cy = 0; cy < cells; ++cy)
        for (int cx = 0; cx < cells; ++cx) {
            int y0 = cy * g.height / cells, y1 = (cy + 1) * g.height / cells;
            int x0 = cx * g.width / cells, x1 = (cx + 1) * g.width / cells;
            y1 = std::max(y1, y0 + 1);
            x1 = std::max(x1, x0 + 1);
            for (int c = 0; c < g.channels; ++c) {
                double mean = 0, sq = 0, gm = 0;
                int64_t n = 0;
                for (int y = y0; y < y1 && y < g.height; ++y)
                    for (int x = x0; x < x1 && x < g.width; ++x) {
                        double v = g.at(c, y, x);
                        mean += v;
                        sq += v * v;
                        gm += gradmag(c, y, x);
                        ++n;
                    }
                mean /= (double)n;
                sq = sq / (double)n - mean * mean;
                feat.push_back(mean);
                feat.push_back(std::sqrt(std::max(sq, 0.0)));
                feat.push_back(gm / (double)n);
            }
        }
    return feat;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ShapeError("cosine_similarity: size mismatch");
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0 || nb == 0) return na == nb ? 1.0 : 0.0;
    return dot / std::sqrt(na * nb);
}

ScoreRecord ice_dimensions(const RawMetrics& raw) {
    auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (raw.aesthetic < 0 || raw.aesthetic > 10)
        throw DataError("ice_dimensions: aesthetic out of [0,10]");
    if (raw.imaging < 0 || raw.imaging > 100)
        throw DataError("ice_dimensions: imaging out of [0,100]");
    if (!in01(raw.clip_cap) || !in01(raw.vllm_qa) || !in01(raw.clip_src) || !in01(raw.l1_src))
        throw DataError("ice_dimensions: 0-1 metric out of range");
    ScoreRecord s;
    s.s_aes = raw.aesthetic / 10.0;
    s.s_img = raw.imaging / 100.0;
    s.s_pf = (2.0 * raw.clip_cap + raw.vllm_qa) / 3.0;
    s.s_src = (raw.clip_src + (1.0 - raw.l1_src)) / 2.0;
    s.task_score = 0.3 * (s.s_aes + s.s_img + s.s_pf) + 0.1 * s.s_src;
    return s;
}

std::vector<double> avg_rank(const std::vector<std::vector<double>>& table,
                             const std::vector<bool>& higher_better) {
    size_t methods = table.size();
    if (methods < 2) throw DataError("avg_rank: need at least two methods");
    size_t metrics = higher_better.size();
    for (const auto& row : table)
        if (row.size() != metrics) throw DataError("avg_rank: missing cell");
    std::vector<double> acc(methods, 0.0);
    for (size_t j = 0; j < metrics; ++j) {
        std::vector<size_t> order(methods);
        std::iota(order.begin(), order.end(), (size_t)0);
        std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            return higher_better[j] ? table[a][j] > table[b][j] : table[a][j] < table[b][j];
        });
        // fractional mid-ranks over tie groups
        size_t i = 0;
        while (i < methods) {
            size_t k = i;
            while (k + 1 < methods && table[order[k + 1]][j] == table[order[i]][j]) ++k;
            double rank = (double)(i + 1 + k + 1) / 2.0;
            for (size_t t = i; t <= k; ++t) acc[order[t]] += rank;
            i = k + 1;
        }
    }
    for (auto& v : acc) v /= (double)metrics;
    return acc;
}

std::pair<double, double> audit_distances(const Grid& source, const Grid& target,
                                          const Grid& mask) {
    if (!source.same_dims(target)) throw ShapeError("audit_distances: dims differ");
    if (mask.channels != 1 || !is_binary(mask))
        throw DataError("audit_distances: mask must be binary 1-channel");
    bool any = false, all = true;
    for (double v : mask.v) {
        if (v != 0.0) any = true;
        else all = false;
    }
    if (!any || all) throw DataError("audit_distances: mask must be nonempty and not full");

    // tight pixel bbox of the mask
    int top = mask.height, left = mask.width, bottom = -1, right = -1;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(0, y, x) != 0.0) {
                top = std::min(top, y);
                left = std::min(left, x);
                bottom = std::max(bottom, y);
                right = std::max(right, x);
            }
    auto crop = [&](const Grid& g) {
        Grid c(g.channels, bottom - top + 1, right - left + 1);
        for (int ch = 0; ch < g.channels; ++ch)
            for (int y = 0; y < c.height; ++y)
                for (int x = 0; x < c.width; ++x)
                    c.at(ch, y, x) = g.at(ch, top + y, left + x);
        return c;
    };
    double d_obj = 1.0 - cosine_similarity(patch_embed(crop(source)), patch_embed(crop(target)));

    auto masked_out = [&](const Grid& g) {
        Grid m = g;
        for (int ch = 0; ch < g.channels; ++ch)
            for (int y = 0; y < g.height; ++y)
                for (int x = 0; x < g.width; ++x)
                    if (mask.at(0, y, x) != 0.0) m.at(ch, y, x) = 0.0;
        return m;
    };
    double d_bg =
        1.0 - cosine_similarity(patch_embed(masked_out(source)), patch_embed(masked_out(target)));

    auto clamp01 = [](double v) { return std::clamp(v, 0.0, 1.0); };
    return {clamp01(d_obj), clamp01(d_bg)};
}

}  // namespace bridge
