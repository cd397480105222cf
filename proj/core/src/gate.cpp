#include "bridge/gate.hpp"

#include "bridge/errors.hpp"

namespace bridge {

int64_t count_gate_params(const GateConfig& cfg, int layers) {
    const int64_t d = cfg.model_dim, h = cfg.hidden, f = cfg.ffn;
    int64_t per = 0;
    per += d * h + h;                    // input projection
    per += 3 * (h * h + h) + h * h;      // q/k/v biased, output proj unbiased
    per += 2 * (2 * h);                  // two LayerNorm affines
    per += h * f + f + f * h + h;        // feed-forward
    per += h + 1;                        // scalar head
    return per * layers;
}

std::vector<PECoord> pe_select(const std::vector<int>& g,
                               const std::vector<PECoord>& pe_base,
                               const std::vector<PECoord>& pe_swap) {
    if (g.size() != pe_base.size() || g.size() != pe_swap.size())
        throw ShapeError("pe_select: length mismatch");
    std::vector<PECoord> out(g.size());
    for (size_t i = 0; i < g.size(); ++i) {
        if (g[i] != 0 && g[i] != 1) throw DataError("pe_select: gate bits must be 0 or 1");
        out[i] = g[i] ? pe_base[i] : pe_swap[i];
    }
    return out;
}

}  // namespace bridge
