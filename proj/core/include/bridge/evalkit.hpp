#pragma once

#include <string>
#include <vector>

#include "bridge/grid.hpp"
#include "bridge/layout.hpp"

namespace bridge {

struct RegionMetrics {
    double local_l1 = 0, local_l2 = 0;
    double global_l1 = 0, global_l2 = 0;
};

// Mean absolute / squared pixel differences inside the bbox crop (local) and
// over the full image (global).
RegionMetrics region_metrics(const Grid& generated, const Grid& reference, const BBox& bbox);

// Fixed patch-statistics embedding: a 4x4 cell grid, per cell and channel the
// mean, standard deviation and mean gradient magnitude. 144 dims for RGB.
std::vector<double> patch_embed(const Grid& g);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

struct RawMetrics {
    double aesthetic = 0;  // 0..10
    double imaging = 0;    // 0..100
    double clip_cap = 0;   // 0..1
    double vllm_qa = 0;    // 0..1
    double clip_src = 0;   // 0..1
    double l1_src = 0;     // 0..1
};

struct ScoreRecord {
    double s_aes = 0, s_img = 0, s_pf = 0, s_src = 0;
    double task_score = 0;
};

// S_AES = aes/10, S_IMG = imaging/100, S_PF = (2*clip_cap + vllm_qa)/3,
// S_SRC = (clip_src + (1 - l1_src))/2,
// TaskScore = 0.3*(S_AES + S_IMG + S_PF) + 0.1*S_SRC.
ScoreRecord ice_dimensions(const RawMetrics& raw);

// Per-method average rank over a methods x metrics table. `higher_better[j]`
// gives the direction of metric j; ties receive fractional mid-ranks.
std::vector<double> avg_rank(const std::vector<std::vector<double>>& table,
                             const std::vector<bool>& higher_better);

// (d_obj, d_bg) from the patch-statistics embedding: d_obj = cosine distance
// of the mask-bbox crops, d_bg = cosine distance of the images with masked
// pixels zeroed. Both clamped to [0,1].
std::pair<double, double> audit_distances(const Grid& source, const Grid& target,
                                          const Grid& mask);

}  // namespace bridge
