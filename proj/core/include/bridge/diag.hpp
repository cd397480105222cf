#pragma once

#include <cstdint>

namespace bridge {

// Attention-coupling experiment: measure how strongly two correlated-content
// tokens couple when they share rotary coordinates versus when they sit on
// distinct frames, across random attention initializations.
struct DiagConfig {
    int trials = 200;
    uint64_t seed = 1;
    int grid = 4;       // main token grid side
    int64_t dim = 32;
    int heads = 2;
    double content_noise = 0.5;  // perturbation between the paired tokens
};

struct DiagResult {
    int trials = 0;
    int shared_wins = 0;          // trials where shared-PE similarity is strictly higher
    double mean_shared = 0;       // mean cosine similarity of the two attention rows
    double mean_distinct = 0;
    double p_value = 1.0;         // one-sided sign test against chance
};

DiagResult attention_coupling(const DiagConfig& cfg);

// Same setup with a -inf cross-pair attention mask; returns the largest
// absolute post-softmax weight between the masked pair (exactly 0 expected).
double masked_pair_weight(const DiagConfig& cfg);

// P(Binomial(n, 0.5) >= k), exact summation.
double sign_test_pvalue(int n, int k);

}  // namespace bridge
