#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bridge/grid.hpp"

namespace bridge {

// Morphology uses the Chebyshev ball (square of side 2r+1).
// Border rule: dilation treats outside-image as background (0); erosion treats
// outside-image as foreground (1), which makes dilate(m,r) == !erode(!m,r).
Grid dilate(const Grid& mask, int r);
Grid erode(const Grid& mask, int r);

// Separable Gaussian blur, kernel truncated at ceil(3*sigma). sigma == 0 is
// the identity.
Grid gaussian_blur(const Grid& g, double sigma);

struct PerturbParams {
    int dilate_min = 1;
    int dilate_max = 3;
    double boundary_noise = 1.0;  // band half-width for random boundary flips
    double feather_sigma = 1.0;
    uint64_t seed = 0;
};

// Coarsen a ground-truth mask into a sloppy hint: random dilation, boundary
// flips inside the noise band, Gaussian feathering re-binarized at 0.5. The
// result always contains erode(true_mask, 1). Retries with halved
// perturbation if the mask empties, then rejects after 8 attempts.
Grid perturb_mask(const Grid& true_mask, const PerturbParams& p);

// out = a*target + (1-a)*source, a = blurred mask clamped to [0,1].
// sigma == 0 is a hard paste.
Grid forced_composite(const Grid& source, const Grid& target, const Grid& mask,
                      double feather_sigma);

// Mean absolute difference of gradient magnitude between the two images over
// the band dilate(mask,w) \ erode(mask,w). Zero for identical images.
double seam_score(const Grid& composited, const Grid& source, const Grid& mask,
                  int band_width);

struct AuditThresholds {
    double d_obj_min = 0.25;
    double d_bg_max = 0.6;
    double confidence_min = 0.95;  // applied only when a confidence is supplied
};

struct AuditVerdict {
    bool keep = false;
    std::string reason;  // empty when kept
};

// keep iff d_obj > d_obj_min AND d_bg < d_bg_max (both strict); when a
// confidence is supplied, additionally require confidence >= confidence_min.
AuditVerdict dual_audit_filter(double d_obj, double d_bg, const AuditThresholds& t,
                               std::optional<double> confidence = std::nullopt);

struct RankCandidate {
    int64_t id = 0;
    double seam = 0.0;  // lower is better
    double bg = 0.0;    // lower is better
};

struct RankedCandidate {
    int64_t id = 0;
    double seam = 0.0;
    double bg = 0.0;
    double composite = 0.0;
    int rank = 0;        // 1-based among survivors
    bool top_k = false;  // in the curated split
};

struct RankResult {
    std::vector<RankedCandidate> ordered;  // survivors, best first
    std::vector<int64_t> prefiltered_ids;  // dropped by the bg < 0.4 prefilter
    bool short_of_k = false;               // K exceeded survivor count
};

// Pre-filter bg < 0.4 (strict), then rank by the mean of min-max-normalized
// (1 - seam) and (1 - bg). Ties break by input index. Degenerate normalization
// (all values equal) maps to 0.
RankResult rank_candidates(const std::vector<RankCandidate>& records, int top_k,
                           double bg_prefilter = 0.4);

}  // namespace bridge
