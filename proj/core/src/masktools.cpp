#include "bridge/masktools.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "bridge/errors.hpp"

namespace bridge {

namespace {

void require_binary_mask(const Grid& m, const char* op) {
    if (m.channels != 1 || !is_binary(m))
        throw DataError(std::string(op) + ": mask must be a binary 1-channel grid");
}

// 1-D sliding max/min along rows then columns; pad: value outside the image.
Grid cheb_extremum(const Grid& m, int r, bool take_max, double pad) {
    Grid tmp(1, m.height, m.width);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            double best = pad;
            for (int d = -r; d <= r; ++d) {
                int xx = x + d;
                double v = (xx < 0 || xx >= m.width) ? pad : m.at(0, y, xx);
                best = take_max ? std::max(best, v) : std::min(best, v);
            }
            tmp.at(0, y, x) = best;
        }
    Grid out(1, m.height, m.width);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            double best = pad;
            for (int d = -r; d <= r; ++d) {
                int yy = y + d;
                double v = (yy < 0 || yy >= m.height) ? pad : tmp.at(0, yy, x);
                best = take_max ? std::max(best, v) : std::min(best, v);
            }
            out.at(0, y, x) = best;
        }
    return out;
}

bool any_set(const Grid& m) {
    for (double v : m.v)
        if (v != 0.0) return true;
    return false;
}

}  // namespace

Grid dilate(const Grid& mask, int r) {
    require_binary_mask(mask, "dilate");
    if (r < 0) throw DataError("dilate: negative radius");
    if (r == 0) return mask;
    return cheb_extremum(mask, r, true, 0.0);
}

Grid erode(const Grid& mask, int r) {
    require_binary_mask(mask, "erode");
    if (r < 0) throw DataError("erode: negative radius");
    if (r == 0) return mask;
    return cheb_extremum(mask, r, false, 1.0);
}

Grid gaussian_blur(const Grid& g, double sigma) {
    if (sigma < 0) throw DataError("gaussian_blur: negative sigma");
    if (sigma == 0.0) return g;
    int radius = (int)std::ceil(3.0 * sigma);
    std::vector<double> k((size_t)(2 * radius + 1));
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        k[(size_t)(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[(size_t)(i + radius)];
    }
    for (auto& v : k) v /= sum;
    Grid tmp(g.channels, g.height, g.width), out(g.channels, g.height, g.width);
    for (int c = 0; c < g.channels; ++c)
        for (int y = 0; y < g.height; ++y)
            for (int x = 0; x < g.width; ++x) {
                double acc = 0;
                for (int d = -radius; d <= radius; ++d) {
                    int xx = std::clamp(x + d, 0, g.width - 1);
                    acc += k[(size_t)(d + radius)] * g.at(c, y, xx);
                }
                tmp.at(c, y, x) = acc;
            }
    for (int c = 0; c < g.channels; ++c)
        for (int y = 0; y < g.height; ++y)
            for (int x = 0; x < g.width; ++x) {
                double acc = 0;
                for (int d = -radius; d <= radius; ++d) {
                    int yy = std::clamp(y + d, 0, g.height - 1);
                    acc += k[(size_t)(d + radius)] * tmp.at(c, yy, x);
                }
                out.at(c, y, x) = acc;
            }
    return out;
}

Grid perturb_mask(const Grid& true_mask, const PerturbParams& p) {
    require_binary_mask(true_mask, "perturb_mask");
    if (!any_set(true_mask)) throw DataError("perturb_mask: empty mask");
    if (p.dilate_min < 0 || p.dilate_max < p.dilate_min || p.boundary_noise < 0 ||
        p.feather_sigma < 0)
        throw DataError("perturb_mask: invalid parameters");

    Grid keep = erode(true_mask, 1);
    std::mt19937_64 rng(p.seed);

    int dil_min = p.dilate_min, dil_max = p.dilate_max;
    double noise = p.boundary_noise, sigma = p.feather_sigma;
    for (int attempt = 0; attempt < 8; ++attempt) {
        int r = dil_min + (dil_max > dil_min
                               ? (int)(rng() % (uint64_t)(dil_max - dil_min + 1))
                               : 0);
        Grid m = dilate(true_mask, r);
        if (noise > 0) {
            int band = (int)std::ceil(noise);
            Grid outer = dilate(m, band);
            Grid inner = erode(m, band);
            std::uniform_real_distribution<double> u(0.0, 1.0);
            for (size_t i = 0; i < m.v.size(); ++i)
                if (outer.v[i] != 0.0 && inner.v[i] == 0.0)
                    m.v[i] = u(rng) < 0.5 ? 1.0 : 0.0;
        }
        if (sigma > 0) {
            Grid f = gaussian_blur(m, sigma);
            for (size_t i = 0; i < m.v.size(); ++i) m.v[i] = f.v[i] >= 0.5 ? 1.0 : 0.0;
        }
        // the edit target must stay inside the hint
        for (size_t i = 0; i < m.v.size(); ++i)
            if (keep.v[i] != 0.0) m.v[i] = 1.0;
        if (any_set(m)) return m;
        noise *= 0.5;
        sigma *= 0.5;
        dil_max = std::max(dil_min, dil_max - 1);
    }
    throw DataError("perturb_mask: mask emptied after 8 attempts");
}

Grid forced_composite(const Grid& source, const Grid& target, const Grid& mask,
                      double feather_sigma) {
    if (!source.same_dims(target))
        throw ShapeError("forced_composite: source/target dims differ");
    require_binary_mask(mask, "forced_composite");
    if (mask.height != source.height || mask.width != source.width)
        throw ShapeError("forced_composite: mask dims differ");
    Grid a = gaussian_blur(mask, feather_sigma);
    Grid out(source.channels, source.height, source.width);
    for (int c = 0; c < source.channels; ++c)
        for (int y = 0; y < source.height; ++y)
            for (int x = 0; x < source.width; ++x) {
                double w = std::clamp(a.at(0, y, x), 0.0, 1.0);
                out.at(c, y, x) = w * target.at(c, y, x) + (1.0 - w) * source.at(c, y, x);
            }
    return out;
}

double seam_score(const Grid& composited, const Grid& source, const Grid& mask,
                  int band_width) {
    if (!composited.same_dims(source)) throw ShapeError("seam_score: image dims differ");
    require_binary_mask(mask, "seam_score");
    if (band_width < 1) throw DataError("seam_score: band width must be >= 1");
    Grid outer = dilate(mask, band_width);
    Grid inner = erode(mask, band_width);

    // gradient magnitude via central differences, clamped at borders
    auto gradmag = [](const Grid& g, int c, int y, int x) {
        int xm = std::max(x - 1, 0), xp = std::min(x + 1, g.width - 1);
        int ym = std::max(y - 1, 0), yp = std::min(y + 1, g.height - 1);
        double gx = (g.at(c, y, xp) - g.at(c, y, xm)) / 2.0;
        double gy = (g.at(c, yp, x) - g.at(c, ym, x)) / 2.0;
        return std::sqrt(gx * gx + gy * gy);
    };

    double acc = 0;
    int64_t count = 0;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (outer.at(0, y, x) != 0.0 && inner.at(0, y, x) == 0.0)
                for (int c = 0; c < composited.channels; ++c) {
                    acc += std::abs(gradmag(composited, c, y, x) - gradmag(source, c, y, x));
                    ++count;
                }
    if (count == 0) throw DataError("seam_score: empty boundary band");
    return acc / (double)count;
}

AuditVerdict dual_audit_filter(double d_obj, double d_bg, const AuditThresholds& t,
                               std::optional<double> confidence) {
    if (d_obj < 0 || d_obj > 1 || d_bg < 0 || d_bg > 1)
        throw DataError("dual_audit_filter: distances must be in [0,1]");
    if (confidence && (*confidence < 0 || *confidence > 1))
        throw DataError("dual_audit_filter: confidence must be in [0,1]");
    if (confidence && *confidence < t.confidence_min)
        return {false, "low_confidence"};
    if (!(d_obj > t.d_obj_min)) return {false, "object_change_too_small"};
    if (!(d_bg < t.d_bg_max)) return {false, "background_drift_too_large"};
    return {true, ""};
}

RankResult rank_candidates(const std::vector<RankCandidate>& records, int top_k,
                           double bg_prefilter) {
    if (records.empty()) throw DataError("rank_candidates: empty candidate list");
    RankResult res;
    std::vector<size_t> surv;
    for (size_t i = 0; i < records.size(); ++i) {
        if (records[i].bg < bg_prefilter)
            surv.push_back(i);
        else
            res.prefiltered_ids.push_back(records[i].id);
    }
    if (surv.empty()) throw DataError("rank_candidates: no survivors after bg prefilter");

    double smin = records[surv[0]].seam, smax = smin;
    double bmin = records[surv[0]].bg, bmax = bmin;
    for (size_t i : surv) {
        smin = std::min(smin, records[i].seam);
        smax = std::max(smax, records[i].seam);
        bmin = std::min(bmin, records[i].bg);
        bmax = std::max(bmax, records[i].bg);
    }
    auto norm = [](double x, double lo, double hi) {
        return hi > lo ? (x - lo) / (hi - lo) : 0.0;
    };

    for (size_t i : surv) {
        RankedCandidate rc;
        rc.id = records[i].id;
        rc.seam = records[i].seam;
        rc.bg = records[i].bg;
        rc.composite = ((1.0 - norm(rc.seam, smin, smax)) + (1.0 - norm(rc.bg, bmin, bmax))) / 2.0;
        res.ordered.push_back(rc);
    }
    std::vector<size_t> order(res.ordered.size());
    std::iota(order.begin(), order.end(), (size_t)0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return res.ordered[a].composite > res.ordered[b].composite;
    });
    std::vector<RankedCandidate> sorted;
    for (size_t k = 0; k < order.size(); ++k) {
        RankedCandidate rc = res.ordered[order[k]];
        rc.rank = (int)k + 1;
        rc.top_k = (int)k < top_k;
        sorted.push_back(rc);
    }
    res.ordered = std::move(sorted);
    res.short_of_k = top_k > (int)res.ordered.size();
    return res;
}

}  // namespace bridge
