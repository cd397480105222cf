#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "bridge/gate.hpp"
#include "bridge/grid.hpp"
#include "bridge/layout.hpp"
#include "bridge/tape.hpp"

namespace bridge {

struct BackboneConfig {
    int64_t model_dim = 64;
    int layers = 4;
    int heads = 4;      // head_dim = model_dim / heads, must give >= 6 rotary channels
    int mlp_ratio = 4;
    int patch = 2;
    int channels = 3;
    int64_t vocab = 15;
    int text_tokens = 3;
    double rope_base = 10000.0;

    int64_t head_dim() const { return model_dim / heads; }
    int64_t token_dim() const { return (int64_t)patch * patch * channels; }

    void validate() const {
        if (model_dim <= 0 || layers <= 0 || heads <= 0 || mlp_ratio <= 0 || patch <= 0 ||
            channels <= 0 || vocab <= 0 || text_tokens <= 0)
            throw DataError("backbone config: nonpositive field");
        if (model_dim % heads != 0) throw DataError("backbone config: heads must divide dim");
        if (head_dim() % 2 != 0) throw DataError("backbone config: head dim must be even");
        if (head_dim() < 6) throw DataError("backbone config: need >= 3 rotary pairs per head");
    }
};

// ---- rotary coordinate tables ----

// Split the per-head channel pairs across the three coordinate axes.
struct RopePartition {
    int64_t frame, row, col;
};

inline RopePartition rope_partition(int64_t pairs) {
    if (pairs < 3) throw DataError("rope partition: need >= 3 pairs");
    int64_t frame = std::max<int64_t>(1, pairs / 3);
    int64_t col = (pairs - frame) / 2;
    int64_t row = pairs - frame - col;
    return {frame, row, col};
}

// One rotation per (token, pair): pair k inside an axis block of size B turns
// by angle coord * base^(-k/B).
template <typename T>
RopeTable<T> make_rope_table(const std::vector<PECoord>& coords, int64_t pairs, double base) {
    RopePartition part = rope_partition(pairs);
    RopeTable<T> rt;
    rt.tokens = (int64_t)coords.size();
    rt.pairs = pairs;
    rt.cosv.resize((size_t)(rt.tokens * pairs));
    rt.sinv.resize((size_t)(rt.tokens * pairs));
    for (int64_t t = 0; t < rt.tokens; ++t) {
        const PECoord& pc = coords[(size_t)t];
        for (int64_t p = 0; p < pairs; ++p) {
            double coord;
            int64_t k, block;
            if (p < part.frame) {
                coord = pc.frame;
                k = p;
                block = part.frame;
            } else if (p < part.frame + part.row) {
                coord = pc.row;
                k = p - part.frame;
                block = part.row;
            } else {
                coord = pc.col;
                k = p - part.frame - part.row;
                block = part.col;
            }
            double ang = coord * std::pow(base, -(double)k / (double)block);
            rt.cosv[(size_t)(t * pairs + p)] = (T)std::cos(ang);
            rt.sinv[(size_t)(t * pairs + p)] = (T)std::sin(ang);
        }
    }
    return rt;
}

// ---- parameters ----

template <typename T>
struct ParamStore {
    std::vector<std::string> names;
    std::vector<Tensor<T>> values;

    int64_t add(std::string name, Tensor<T> v) {
        names.push_back(std::move(name));
        values.push_back(std::move(v));
        return (int64_t)values.size() - 1;
    }
    size_t count() const { return values.size(); }
    int64_t numel_total() const {
        int64_t n = 0;
        for (const auto& v : values) n += v.size();
        return n;
    }
};

struct LayerParamIds {
    int64_t rms1, wq, bq, wk, bk, wv, bv, wo, bo;
    int64_t rms2, w1, b1, w2, b2;
    int64_t wmod, bmod;
};

enum class RoutingMode { Adaptive, FixedBase, FixedSwap, NoSubject };
enum class GateClamp { None, AllOpen, AllClosed };

inline const char* routing_name(RoutingMode m) {
    switch (m) {
        case RoutingMode::Adaptive: return "adaptive";
        case RoutingMode::FixedBase: return "fixed_base";
        case RoutingMode::FixedSwap: return "fixed_swap";
        case RoutingMode::NoSubject: return "no_subject";
    }
    return "?";
}

inline RoutingMode routing_from_name(const std::string& s) {
    if (s == "adaptive") return RoutingMode::Adaptive;
    if (s == "fixed_base") return RoutingMode::FixedBase;
    if (s == "fixed_swap") return RoutingMode::FixedSwap;
    if (s == "no_subject") return RoutingMode::NoSubject;
    throw DataError("unknown routing mode: " + s);
}

template <typename T>
struct DiTModel {
    BackboneConfig cfg;
    GateConfig gate_cfg;
    ParamStore<T> params;

    int64_t text_emb;
    int64_t w_in, b_in;
    int64_t t_w1, t_b1, t_w2, t_b2;
    std::vector<LayerParamIds> layer_ids;
    int64_t rms_f, w_out, b_out;
    std::vector<GateParamIds> gate_ids;
};

// Fresh model: normal(0, 0.02) weights, zero biases, unit norm gains. The
// final projection, all modulation projections and every gate head start at
// zero, so an untrained model predicts exactly zero velocity and every gate
// probability sits at 0.5 (routing opens by the tie rule).
template <typename T>
DiTModel<T> init_model(const BackboneConfig& cfg, const GateConfig& gcfg, uint64_t seed) {
    cfg.validate();
    if (gcfg.model_dim != cfg.model_dim)
        throw DataError("gate config: model_dim mismatch with backbone");
    if (gcfg.hidden <= 0 || gcfg.ffn <= 0 || gcfg.heads <= 0 || gcfg.hidden % gcfg.heads != 0)
        throw DataError("gate config: bad hidden/ffn/heads");
    DiTModel<T> m;
    m.cfg = cfg;
    m.gate_cfg = gcfg;
    std::mt19937_64 rng(seed);
    const T sd = T(0.02);
    const int64_t D = cfg.model_dim, td = cfg.token_dim();
    auto& P = m.params;
    auto w = [&](const std::string& n, Shape s) { return P.add(n, Tensor<T>::randn(s, rng, sd)); };
    auto z = [&](const std::string& n, Shape s) { return P.add(n, Tensor<T>::zeros(s)); };
    auto ones = [&](const std::string& n, Shape s) { return P.add(n, Tensor<T>::full(s, T(1))); };

    m.text_emb = w("text_emb", {cfg.vocab, D});
    m.w_in = w("in.w", {td, D});
    m.b_in = z("in.b", {1, D});
    m.t_w1 = w("time.w1", {D, D});
    m.t_b1 = z("time.b1", {1, D});
    m.t_w2 = w("time.w2", {D, D});
    m.t_b2 = z("time.b2", {1, D});
    for (int l = 0; l < cfg.layers; ++l) {
        std::string p = "layer" + std::to_string(l) + ".";
        LayerParamIds ids;
        ids.rms1 = ones(p + "rms1", {D});
        ids.wq = w(p + "wq", {D, D});
        ids.bq = z(p + "bq", {1, D});
        ids.wk = w(p + "wk", {D, D});
        ids.bk = z(p + "bk", {1, D});
        ids.wv = w(p + "wv", {D, D});
        ids.bv = z(p + "bv", {1, D});
        ids.wo = w(p + "wo", {D, D});
        ids.bo = z(p + "bo", {1, D});
        ids.rms2 = ones(p + "rms2", {D});
        ids.w1 = w(p + "mlp.w1", {D, D * cfg.mlp_ratio});
        ids.b1 = z(p + "mlp.b1", {1, D * cfg.mlp_ratio});
        ids.w2 = w(p + "mlp.w2", {D * cfg.mlp_ratio, D});
        ids.b2 = z(p + "mlp.b2", {1, D});
        ids.wmod = z(p + "mod.w", {D, 4 * D});
        ids.bmod = z(p + "mod.b", {1, 4 * D});
        m.layer_ids.push_back(ids);
    }
    m.rms_f = ones("final.rms", {D});
    m.w_out = z("final.w", {D, td});
    m.b_out = z("final.b", {1, td});
    for (int l = 0; l < cfg.layers; ++l) {
        std::string p = "gate" + std::to_string(l) + ".";
        const int64_t H = gcfg.hidden, F = gcfg.ffn;
        GateParamIds g;
        g.proj_w = w(p + "proj.w", {D, H});
        g.proj_b = z(p + "proj.b", {1, H});
        g.ln1_g = ones(p + "ln1.g", {H});
        g.ln1_b = z(p + "ln1.b", {H});
        g.wq = w(p + "wq", {H, H});
        g.bq = z(p + "bq", {1, H});
        g.wk = w(p + "wk", {H, H});
        g.bk = z(p + "bk", {1, H});
        g.wv = w(p + "wv", {H, H});
        g.bv = z(p + "bv", {1, H});
        g.wo = w(p + "wo", {H, H});
        g.ln2_g = ones(p + "ln2.g", {H});
        g.ln2_b = z(p + "ln2.b", {H});
        g.ffn_w1 = w(p + "ffn.w1", {H, F});
        g.ffn_b1 = z(p + "ffn.b1", {1, F});
        g.ffn_w2 = w(p + "ffn.w2", {F, H});
        g.ffn_b2 = z(p + "ffn.b2", {1, H});
        g.head_w = z(p + "head.w", {H, 1});
        g.head_b = z(p + "head.b", {1, 1});
        m.gate_ids.push_back(g);
    }
    return m;
}

// Register every parameter as a tape leaf; pv is indexed by parameter id.
template <typename T>
std::vector<Var> bind_params(Tape<T>& tape, const ParamStore<T>& ps) {
    std::vector<Var> pv;
    pv.reserve(ps.values.size());
    for (const auto& t : ps.values) pv.push_back(tape.leaf(t));
    return pv;
}

// Sinusoidal embedding of the flow time t, scaled to a [0,1000] phase range.
template <typename T>
Tensor<T> time_embedding(double t, int64_t dim) {
    Tensor<T> e = Tensor<T>::zeros({1, dim});
    int64_t half = dim / 2;
    for (int64_t k = 0; k < half; ++k) {
        double w = std::exp(-std::log(10000.0) * (double)k / (double)half);
        e[k] = (T)std::sin(1000.0 * t * w);
        e[half + k] = (T)std::cos(1000.0 * t * w);
    }
    return e;
}

template <typename T>
struct ForwardOut {
    Var velocity;  // [visual tokens, patch*patch*channels]
    GateTrace trace;
};

// Full dual-path denoiser pass.
//   z_vis:   noisy state tokens, [n_main + n_sub, token_dim]
//   ctx:     clean source tokens, [n_main, token_dim]
//   instr:   text token ids (cfg.text_tokens of them)
//   attn_mask: optional additive [N, N] attention bias shared across heads
template <typename T>
ForwardOut<T> dit_forward(Tape<T>& tape, const DiTModel<T>& model, const std::vector<Var>& pv,
                          Var z_vis, double t, const std::vector<int64_t>& instr, Var ctx,
                          const PathLayout& layout, RoutingMode mode,
                          GateClamp clamp = GateClamp::None,
                          const Tensor<T>* attn_mask = nullptr) {
    const BackboneConfig& cfg = model.cfg;
    const int64_t D = cfg.model_dim;
    const int n_text = cfg.text_tokens;
    const int n_main = layout.main_tokens();
    const int n_sub = layout.subject_tokens();
    const int n_vis = layout.visual_tokens();
    const int64_t N = n_text + n_main + n_vis;

    if ((int)instr.size() != n_text) throw ShapeError("dit_forward: instruction length");
    if (mode == RoutingMode::NoSubject && layout.include_subject)
        throw DataError("dit_forward: no_subject routing needs a subject-free layout");
    if (mode != RoutingMode::NoSubject && !layout.include_subject)
        throw DataError("dit_forward: layout excludes the subject tokens");
    {
        const Tensor<T>& zv = tape.val(z_vis);
        if (zv.rank() != 2 || zv.shape[0] != n_vis || zv.shape[1] != cfg.token_dim())
            throw ShapeError("dit_forward: state tokens " + shape_str(zv.shape));
        const Tensor<T>& cv = tape.val(ctx);
        if (cv.rank() != 2 || cv.shape[0] != n_main || cv.shape[1] != cfg.token_dim())
            throw ShapeError("dit_forward: context tokens " + shape_str(cv.shape));
    }
    if (attn_mask &&
        (attn_mask->rank() != 2 || attn_mask->shape[0] != N || attn_mask->shape[1] != N))
        throw ShapeError("dit_forward: attention mask must be [N, N]");

    // token coordinates for both routing states
    std::vector<PECoord> base_coords, swap_coords;
    base_coords.reserve((size_t)N);
    for (int j = 0; j < n_text; ++j) base_coords.push_back({3 + j, 0, 0});
    for (int i = 0; i < n_main; ++i)
        base_coords.push_back({2, i / layout.main_cols, i % layout.main_cols});
    for (int i = 0; i < n_main; ++i) base_coords.push_back(layout.main_coord(i));
    swap_coords = base_coords;
    for (int i = 0; i < n_sub; ++i) {
        base_coords.push_back(layout.pe_base(i));
        swap_coords.push_back(layout.pe_swap(i));
    }
    const int64_t pairs = cfg.head_dim() / 2;
    RopeTable<T> rt_base = make_rope_table<T>(base_coords, pairs, cfg.rope_base);
    RopeTable<T> rt_swap = make_rope_table<T>(swap_coords, pairs, cfg.rope_base);

    auto lin = [&](Var x, int64_t wid, int64_t bid) {
        return tape.add(tape.matmul(x, pv[(size_t)wid]), pv[(size_t)bid]);
    };

    // embed
    Var x_text = tape.embedding(pv[(size_t)model.text_emb], instr);
    Var x_ctx = lin(ctx, model.w_in, model.b_in);
    Var x_vis = lin(z_vis, model.w_in, model.b_in);
    Var x = tape.concat({x_text, x_ctx, x_vis}, 0);

    // time conditioning
    Var temb = tape.leaf(time_embedding<T>(t, D));
    Var t_feat = lin(tape.silu(lin(temb, model.t_w1, model.t_b1)), model.t_w2, model.t_b2);

    ForwardOut<T> out;
    out.trace.p.resize((size_t)cfg.layers);
    out.trace.g.resize((size_t)cfg.layers);

    const bool dual = (mode == RoutingMode::Adaptive) && n_sub > 0;
    Var ones_head = -1;
    if (dual) ones_head = tape.leaf(Tensor<T>::full({(int64_t)(N - n_sub), 1}, T(1)));

    for (int l = 0; l < cfg.layers; ++l) {
        const LayerParamIds& L = model.layer_ids[(size_t)l];
        Var mod = lin(t_feat, L.wmod, L.bmod);
        Var sc1 = tape.slice(mod, 1, 0, D), sh1 = tape.slice(mod, 1, D, D);
        Var sc2 = tape.slice(mod, 1, 2 * D, D), sh2 = tape.slice(mod, 1, 3 * D, D);

        // routing decision from the pre-attention features
        Var Wsel = -1;
        if (dual) {
            Var h_vis = tape.slice(x, 0, n_text + n_main, n_vis);
            Var p = gate_forward(tape, pv, model.gate_ids[(size_t)l], h_vis,
                                 layout.subject_start(), n_sub, model.gate_cfg.heads);
            Var G;
            switch (clamp) {
                case GateClamp::AllOpen:
                    G = tape.leaf(Tensor<T>::full({(int64_t)n_sub, 1}, T(1)));
                    break;
                case GateClamp::AllClosed:
                    G = tape.leaf(Tensor<T>::zeros({(int64_t)n_sub, 1}));
                    break;
                case GateClamp::None:
                default:
                    G = tape.ste_threshold(p);
                    break;
            }
            const Tensor<T>& pval = tape.val(p);
            const Tensor<T>& gval = tape.val(G);
            for (int i = 0; i < n_sub; ++i) {
                out.trace.p[(size_t)l].push_back((double)pval[i]);
                out.trace.g[(size_t)l].push_back((double)gval[i]);
            }
            Wsel = tape.concat({ones_head, G}, 0);  // [N, 1]
        }

        Var h = tape.rmsnorm_lastdim(x, pv[(size_t)L.rms1]);
        h = tape.add(tape.mul(h, tape.affine(sc1, T(1), T(1))), sh1);
        Var q = lin(h, L.wq, L.bq);
        Var k = lin(h, L.wk, L.bk);
        Var v = lin(h, L.wv, L.bv);

        auto route = [&](Var y) {
            if (mode == RoutingMode::FixedSwap)
                return tape.rope(y, rt_swap, cfg.heads);
            if (!dual) return tape.rope(y, rt_base, cfg.heads);
            Var yb = tape.rope(y, rt_base, cfg.heads);
            Var ys = tape.rope(y, rt_swap, cfg.heads);
            // W is 0/1, so each token carries exactly one coordinate set
            return tape.add(tape.mul(yb, Wsel), tape.mul(ys, tape.affine(Wsel, T(-1), T(1))));
        };
        q = route(q);
        k = route(k);

        const int64_t hd = cfg.head_dim();
        auto split = [&](Var y) {
            return tape.transpose(tape.reshape(y, {N, (int64_t)cfg.heads, hd}), 0, 1);
        };
        Var scores = tape.bmm(split(q), tape.transpose(split(k), 1, 2),
                              (T)(1.0 / std::sqrt((double)hd)));
        Var w = tape.softmax_lastdim(scores, attn_mask);
        Var av = tape.reshape(tape.transpose(tape.bmm(w, split(v)), 0, 1), {N, D});
        x = tape.add(x, lin(av, L.wo, L.bo));

        Var h2 = tape.rmsnorm_lastdim(x, pv[(size_t)L.rms2]);
        h2 = tape.add(tape.mul(h2, tape.affine(sc2, T(1), T(1))), sh2);
        Var f = tape.silu(lin(h2, L.w1, L.b1));
        x = tape.add(x, lin(f, L.w2, L.b2));
    }

    Var xf = tape.rmsnorm_lastdim(x, pv[(size_t)model.rms_f]);
    Var vis = tape.slice(xf, 0, n_text + n_main, n_vis);
    out.velocity = lin(vis, model.w_out, model.b_out);
    return out;
}

// ---- checkpoint directory ----

template <typename T>
void save_model(const std::string& dir, const DiTModel<T>& m) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream f(dir + "/model.txt");
    if (!f) throw DataError("cannot open for write: " + dir + "/model.txt");
    f << "format=1\n";
    f << "dtype=" << dtype_name<T>() << "\n";
    f << "model_dim=" << m.cfg.model_dim << "\nlayers=" << m.cfg.layers
      << "\nheads=" << m.cfg.heads << "\nmlp_ratio=" << m.cfg.mlp_ratio
      << "\npatch=" << m.cfg.patch << "\nchannels=" << m.cfg.channels
      << "\nvocab=" << m.cfg.vocab << "\ntext_tokens=" << m.cfg.text_tokens
      << "\nrope_base=" << m.cfg.rope_base << "\n";
    f << "gate_hidden=" << m.gate_cfg.hidden << "\ngate_ffn=" << m.gate_cfg.ffn
      << "\ngate_heads=" << m.gate_cfg.heads << "\n";
    for (size_t i = 0; i < m.params.count(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "p%04zu.tnsr", i);
        f << "param=" << m.params.names[i] << " " << name << "\n";
        save_tensor(dir + "/" + name, m.params.values[i]);
    }
}

template <typename T>
DiTModel<T> load_model(const std::string& dir) {
    std::ifstream f(dir + "/model.txt");
    if (!f) throw DataError("cannot open: " + dir + "/model.txt");
    std::map<std::string, std::string> kv;
    std::vector<std::pair<std::string, std::string>> files;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError("checkpoint: bad line '" + line + "'");
        std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "param") {
            auto sp = val.find(' ');
            if (sp == std::string::npos) throw DataError("checkpoint: bad param line");
            files.emplace_back(val.substr(0, sp), val.substr(sp + 1));
        } else {
            kv[key] = val;
        }
    }
    auto need = [&](const std::string& k) {
        auto it = kv.find(k);
        if (it == kv.end()) throw DataError("checkpoint: missing key " + k);
        return it->second;
    };
    if (need("dtype") != dtype_name<T>())
        throw DataError("checkpoint: dtype is " + kv["dtype"] + ", expected " + dtype_name<T>());
    BackboneConfig cfg;
    cfg.model_dim = std::stoll(need("model_dim"));
    cfg.layers = std::stoi(need("layers"));
    cfg.heads = std::stoi(need("heads"));
    cfg.mlp_ratio = std::stoi(need("mlp_ratio"));
    cfg.patch = std::stoi(need("patch"));
    cfg.channels = std::stoi(need("channels"));
    cfg.vocab = std::stoll(need("vocab"));
    cfg.text_tokens = std::stoi(need("text_tokens"));
    cfg.rope_base = std::stod(need("rope_base"));
    GateConfig gcfg;
    gcfg.model_dim = cfg.model_dim;
    gcfg.hidden = std::stoll(need("gate_hidden"));
    gcfg.ffn = std::stoll(need("gate_ffn"));
    gcfg.heads = std::stoi(need("gate_heads"));
    DiTModel<T> m = init_model<T>(cfg, gcfg, 0);
    if (files.size() != m.params.count())
        throw DataError("checkpoint: parameter count mismatch");
    for (size_t i = 0; i < files.size(); ++i) {
        if (files[i].first != m.params.names[i])
            throw DataError("checkpoint: parameter order mismatch at " + files[i].first);
        Tensor<T> t = load_tensor<T>(dir + "/" + files[i].second);
        if (t.shape != m.params.values[i].shape)
            throw DataError("checkpoint: shape mismatch for " + files[i].first);
        m.params.values[i] = std::move(t);
    }
    return m;
}

}  // namespace bridge
