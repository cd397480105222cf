#include "bridge/diag.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "bridge/backbone.hpp"

namespace bridge {

double sign_test_pvalue(int n, int k) {
    if (n <= 0) throw DataError("sign test: n must be positive");
    if (k < 0) k = 0;
    double p = 0.0;
    for (int i = k; i <= n; ++i) {
        double logc = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0);
        p += std::exp(logc - n * std::log(2.0));
    }
    return std::min(p, 1.0);
}

namespace {

struct Setup {
    int n;                         // token count (grid^2 main + 1 probe)
    int a, b;                      // indices of the paired tokens
    std::vector<std::vector<double>> x;  // contents [n][dim]
    std::vector<double> wq, wk;          // [dim][dim] row-major
};

Setup make_setup(const DiagConfig& cfg, std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Setup s;
    int g = cfg.grid;
    s.n = g * g + 1;
    s.a = (g / 2) * g + g / 2;  // a central main token
    s.b = s.n - 1;              // the probe token, appended last
    s.x.assign((size_t)s.n, std::vector<double>((size_t)cfg.dim));
    for (auto& row : s.x)
        for (auto& v : row) v = nd(rng);
    // probe content correlates with token a but stays distinct
    for (int64_t j = 0; j < cfg.dim; ++j)
        s.x[(size_t)s.b][(size_t)j] =
            s.x[(size_t)s.a][(size_t)j] + cfg.content_noise * nd(rng);
    s.wq.resize((size_t)(cfg.dim * cfg.dim));
    s.wk.resize((size_t)(cfg.dim * cfg.dim));
    double sd = 1.0 / std::sqrt((double)cfg.dim);
    for (auto& v : s.wq) v = sd * nd(rng);
    for (auto& v : s.wk) v = sd * nd(rng);
    return s;
}

// Mean attention row (averaged over heads) for every token; optional -inf
// mask between the pair.
std::vector<std::vector<double>> attention_rows(const DiagConfig& cfg, const Setup& s,
                                                const std::vector<PECoord>& coords,
                                                bool mask_pair) {
    const int64_t hd = cfg.dim / cfg.heads;
    const int64_t pairs = hd / 2;
    RopeTable<double> rt = make_rope_table<double>(coords, pairs, 10000.0);
    auto proj = [&](const std::vector<double>& w, int i) {
        std::vector<double> y((size_t)cfg.dim, 0.0);
        for (int64_t r = 0; r < cfg.dim; ++r)
            for (int64_t c = 0; c < cfg.dim; ++c)
                y[(size_t)c] += s.x[(size_t)i][(size_t)r] * w[(size_t)(r * cfg.dim + c)];
        // rotate each head's channel pairs
        for (int h = 0; h < cfg.heads; ++h)
            for (int64_t p = 0; p < pairs; ++p) {
                double cv = rt.cosv[(size_t)(i * pairs + p)];
                double sv = rt.sinv[(size_t)(i * pairs + p)];
                double& y0 = y[(size_t)(h * hd + 2 * p)];
                double& y1 = y[(size_t)(h * hd + 2 * p + 1)];
                double a0 = cv * y0 - sv * y1, a1 = sv * y0 + cv * y1;
                y0 = a0;
                y1 = a1;
            }
        return y;
    };
    std::vector<std::vector<double>> q((size_t)s.n), k((size_t)s.n);
    for (int i = 0; i < s.n; ++i) {
        q[(size_t)i] = proj(s.wq, i);
        k[(size_t)i] = proj(s.wk, i);
    }
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> rows((size_t)s.n, std::vector<double>((size_t)s.n, 0.0));
    for (int h = 0; h < cfg.heads; ++h) {
        for (int i = 0; i < s.n; ++i) {
            std::vector<double> logit((size_t)s.n);
            double mx = -inf;
            for (int j = 0; j < s.n; ++j) {
                double d = 0;
                for (int64_t c = 0; c < hd; ++c)
                    d += q[(size_t)i][(size_t)(h * hd + c)] * k[(size_t)j][(size_t)(h * hd + c)];
                d /= std::sqrt((double)hd);
                if (mask_pair && ((i == s.a && j == s.b) || (i == s.b && j == s.a))) d = -inf;
                logit[(size_t)j] = d;
                if (d > mx) mx = d;
            }
            double sum = 0;
            std::vector<double> e((size_t)s.n);
            for (int j = 0; j < s.n; ++j) {
                e[(size_t)j] = std::isinf(logit[(size_t)j]) ? 0.0
                                                            : std::exp(logit[(size_t)j] - mx);
                sum += e[(size_t)j];
            }
            for (int j = 0; j < s.n; ++j)
                rows[(size_t)i][(size_t)j] += e[(size_t)j] / sum / cfg.heads;
        }
    }
    return rows;
}

double row_cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / std::sqrt(na * nb);
}

std::vector<PECoord> base_coords(const DiagConfig& cfg) {
    std::vector<PECoord> coords;
    for (int i = 0; i < cfg.grid * cfg.grid; ++i)
        coords.push_back({0, i / cfg.grid, i % cfg.grid});
    return coords;
}

}  // namespace

DiagResult attention_coupling(const DiagConfig& cfg) {
    if (cfg.trials < 1 || cfg.grid < 2 || cfg.heads < 1 || cfg.dim % cfg.heads != 0 ||
        (cfg.dim / cfg.heads) % 2 != 0 || (cfg.dim / cfg.heads) / 2 < 3)
        throw DataError("diag config: invalid geometry");
    std::mt19937_64 rng(cfg.seed);
    DiagResult res;
    res.trials = cfg.trials;
    for (int t = 0; t < cfg.trials; ++t) {
        Setup s = make_setup(cfg, rng);
        std::vector<PECoord> shared = base_coords(cfg);
        shared.push_back(shared[(size_t)s.a]);  // probe reuses token a's coordinates
        std::vector<PECoord> distinct = base_coords(cfg);
        distinct.push_back({1, cfg.grid / 2, cfg.grid / 2});  // same spatial slot, other frame

        auto rows_s = attention_rows(cfg, s, shared, false);
        auto rows_d = attention_rows(cfg, s, distinct, false);
        double cs = row_cosine(rows_s[(size_t)s.a], rows_s[(size_t)s.b]);
        double cd = row_cosine(rows_d[(size_t)s.a], rows_d[(size_t)s.b]);
        res.mean_shared += cs;
        res.mean_distinct += cd;
        if (cs > cd) ++res.shared_wins;
    }
    res.mean_shared /= cfg.trials;
    res.mean_distinct /= cfg.trials;
    res.p_value = sign_test_pvalue(cfg.trials, res.shared_wins);
    return res;
}

double masked_pair_weight(const DiagConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    Setup s = make_setup(cfg, rng);
    std::vector<PECoord> coords = base_coords(cfg);
    coords.push_back(coords[(size_t)s.a]);
    auto rows = attention_rows(cfg, s, coords, true);
    return std::max(std::abs(rows[(size_t)s.a][(size_t)s.b]),
                    std::abs(rows[(size_t)s.b][(size_t)s.a]));
}

}  // namespace bridge
