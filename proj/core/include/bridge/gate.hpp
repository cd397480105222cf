#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bridge/layout.hpp"
#include "bridge/tape.hpp"

namespace bridge {

// GateBlock layout: input projection D -> hidden (bias), then one pre-norm
// transformer encoder layer at hidden width (LayerNorm affine x2; q/k/v with
// bias, output projection without bias; feed-forward hidden -> ffn -> hidden,
// both linears biased), then a zero-initialized scalar head (bias). With
// hidden = ffn = 64 this reproduces 221,889 parameters per layer at D = 3072.
struct GateConfig {
    int64_t model_dim = 64;  // D of the host backbone
    int64_t hidden = 64;
    int64_t ffn = 64;        // feed-forward width, defaults to hidden
    int heads = 4;           // attention heads inside the encoder
};

// Exact parameter count of `layers` GateBlocks under the layout above.
int64_t count_gate_params(const GateConfig& cfg, int layers);

// Parameter ids of one GateBlock inside a ParamStore.
struct GateParamIds {
    int64_t proj_w, proj_b;
    int64_t ln1_g, ln1_b;
    int64_t wq, bq, wk, bk, wv, bv, wo;
    int64_t ln2_g, ln2_b;
    int64_t ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    int64_t head_w, head_b;
};

// Per-layer routing record: probabilities p and hard decisions G for every
// subject token.
struct GateTrace {
    std::vector<std::vector<double>> p;  // [layer][subject token]
    std::vector<std::vector<double>> g;
};

// PE_eff selection: base coordinates where the gate opens (G=1), swap
// coordinates where it closes. Always one of the two triples, never a mix.
std::vector<PECoord> pe_select(const std::vector<int>& g,
                               const std::vector<PECoord>& pe_base,
                               const std::vector<PECoord>& pe_swap);

namespace detail {

template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, Var b) {
    return tape.add(tape.matmul(x, w), b);
}

}  // namespace detail

// Forward pass of one GateBlock. `h_vis` holds the concatenated main+subject
// features [n_vis, D]; logits are emitted at the subject rows
// [subject_start, subject_start+n_sub). Returns p as a [n_sub, 1] Var
// (empty subject range yields an empty tensor).
template <typename T>
Var gate_forward(Tape<T>& tape, const std::vector<Var>& pv, const GateParamIds& ids,
                 Var h_vis, int subject_start, int n_sub, int heads) {
    const int64_t n_vis = tape.val(h_vis).shape[0];
    if (subject_start < 0 || subject_start + n_sub > n_vis)
        throw ShapeError("gate_forward: subject range outside sequence");
    if (n_sub == 0) return tape.leaf(Tensor<T>::zeros({0, 1}));

    using detail::linear;
    Var x = linear(tape, h_vis, pv[(size_t)ids.proj_w], pv[(size_t)ids.proj_b]);
    const int64_t h = tape.val(x).shape[1];
    if (heads <= 0 || h % heads != 0)
        throw ShapeError("gate_forward: heads must divide hidden width");

    // encoder: pre-norm attention + feed-forward
    {
        Var n1 = tape.layernorm_lastdim(x, pv[(size_t)ids.ln1_g], pv[(size_t)ids.ln1_b]);
        Var q = linear(tape, n1, pv[(size_t)ids.wq], pv[(size_t)ids.bq]);
        Var k = linear(tape, n1, pv[(size_t)ids.wk], pv[(size_t)ids.bk]);
        Var v = linear(tape, n1, pv[(size_t)ids.wv], pv[(size_t)ids.bv]);
        int nh = heads;
        int64_t hd = h / nh;
        auto split = [&](Var z) {
            return tape.transpose(tape.reshape(z, {n_vis, nh, hd}), 0, 1);
        };
        Var qh = split(q), kh = split(k), vh = split(v);
        Var scores = tape.bmm(qh, tape.transpose(kh, 1, 2), T(1) / std::sqrt((T)hd));
        Var w = tape.softmax_lastdim(scores);
        Var av = tape.reshape(tape.transpose(tape.bmm(w, vh), 0, 1), {n_vis, h});
        Var o = tape.matmul(av, pv[(size_t)ids.wo]);  // no bias on the output proj
        x = tape.add(x, o);
    }
    {
        Var n2 = tape.layernorm_lastdim(x, pv[(size_t)ids.ln2_g], pv[(size_t)ids.ln2_b]);
        Var f = tape.silu(linear(tape, n2, pv[(size_t)ids.ffn_w1], pv[(size_t)ids.ffn_b1]));
        Var o = linear(tape, f, pv[(size_t)ids.ffn_w2], pv[(size_t)ids.ffn_b2]);
        x = tape.add(x, o);
    }

    Var sub = tape.slice(x, 0, subject_start, n_sub);
    Var logits = linear(tape, sub, pv[(size_t)ids.head_w], pv[(size_t)ids.head_b]);
    return tape.sigmoid(logits);  // [n_sub, 1]
}

}  // namespace bridge
