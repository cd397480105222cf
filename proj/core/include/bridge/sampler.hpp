#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "bridge/backbone.hpp"
#include "bridge/synth.hpp"
#include "bridge/train.hpp"

namespace bridge {

enum class BlendSupport { BBoxTokens, PixelMask };

struct SampleConfig {
    int steps = 32;
    double cfg_scale = 2.0;
    bool rescale = true;
    BlendSupport support = BlendSupport::BBoxTokens;
    double alpha = 0.1;
    uint64_t seed = 0;
    bool emit_subject = false;
    RoutingMode routing = RoutingMode::Adaptive;
    GateClamp clamp = GateClamp::None;

    void validate() const {
        if (steps < 1) throw DataError("sample config: steps must be >= 1");
        if (cfg_scale < 0.0) throw DataError("sample config: cfg scale must be >= 0");
        if (alpha < 0.0 || alpha > 1.0) throw DataError("sample config: alpha outside [0,1]");
    }
};

// v = v_neg + s*(v_pos - v_neg), optionally rescaled to the norm of v_pos
// (global norm over all entries). A zero-norm guided field is returned as is.
template <typename T>
Tensor<T> cfg_combine(const Tensor<T>& v_pos, const Tensor<T>& v_neg, double s, bool rescale) {
    if (v_pos.shape != v_neg.shape) throw ShapeError("cfg_combine: shape mismatch");
    if (s < 0.0) throw DataError("cfg_combine: scale must be >= 0");
    Tensor<T> v = Tensor<T>::zeros(v_pos.shape);
    double n_pos = 0.0, n_g = 0.0;
    for (int64_t i = 0; i < v.size(); ++i) {
        double g = (double)v_neg[i] + s * ((double)v_pos[i] - (double)v_neg[i]);
        v[i] = (T)g;
        n_pos += (double)v_pos[i] * (double)v_pos[i];
        n_g += g * g;
    }
    if (rescale && n_g > 0.0) {
        double k = std::sqrt(n_pos / n_g);
        for (auto& x : v.data) x = (T)((double)x * k);
    }
    return v;
}

// Forward-corrupted source tokens at time t, using one fixed noise draw.
template <typename T>
Tensor<T> noised_source(const Tensor<T>& z0_src, const Tensor<T>& z1_fixed, double t) {
    return interpolate(z0_src, z1_fixed, t);
}

// Soft latent blend outside the support: inside (M=1) the state passes
// through, outside it mixes toward the corrupted source with weight alpha.
template <typename T>
Tensor<T> blend_step(const Tensor<T>& z, const Tensor<T>& z_orig, const Tensor<T>& support,
                     double alpha) {
    if (z.shape != z_orig.shape || z.shape != support.shape)
        throw ShapeError("blend_step: shape mismatch");
    if (alpha < 0.0 || alpha > 1.0) throw DataError("blend_step: alpha outside [0,1]");
    Tensor<T> out = Tensor<T>::zeros(z.shape);
    for (int64_t i = 0; i < z.size(); ++i) {
        double m = (double)support[i];
        if (m != 0.0 && m != 1.0) throw DataError("blend_step: support must be binary");
        double zi = (double)z[i];
        out[i] = (T)(m * zi + (1.0 - m) * ((1.0 - alpha) * zi + alpha * (double)z_orig[i]));
    }
    return out;
}

// Per-entry 0/1 support over the main-path tokens.
template <typename T>
Tensor<T> blend_support(const EditSample& s, const PathLayout& layout, BlendSupport kind) {
    if (kind == BlendSupport::BBoxTokens) {
        Grid m = bbox_mask(layout.bbox, layout.image_h, layout.image_w);
        Grid rep(s.source.channels, m.height, m.width);
        for (int c = 0; c < rep.channels; ++c)
            for (int y = 0; y < m.height; ++y)
                for (int x = 0; x < m.width; ++x) rep.at(c, y, x) = m.at(0, y, x);
        return patchify<T>(rep, layout.patch);
    }
    Grid rep(s.source.channels, s.coarse_mask.height, s.coarse_mask.width);
    for (int c = 0; c < rep.channels; ++c)
        for (int y = 0; y < rep.height; ++y)
            for (int x = 0; x < rep.width; ++x) rep.at(c, y, x) = s.coarse_mask.at(0, y, x);
    return patchify<T>(rep, layout.patch);
}

template <typename T>
struct SampleResult {
    Grid output;
    Grid subject;  // empty unless emit_subject
    std::vector<GateTrace> trace;  // one per step
};

// Euler integration of the learned flow from t=1 to t=0 with classifier-free
// guidance and per-step background blending on the main segment.
template <typename T>
SampleResult<T> sample(const DiTModel<T>& model, const EditSample& s, const SampleConfig& cfg) {
    cfg.validate();
    const int patch = model.cfg.patch;
    PathLayout layout = sample_layout(s, patch, cfg.routing);
    const int64_t n_main = layout.main_tokens();
    const int64_t n_vis = layout.visual_tokens();
    const int64_t td = model.cfg.token_dim();

    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    Tensor<T> z = Tensor<T>::zeros({n_vis, td});
    for (auto& v : z.data) v = (T)nd(rng);
    Tensor<T> z0_src = patchify<T>(s.source, patch);
    Tensor<T> z1_fixed = Tensor<T>::zeros(z0_src.shape);
    for (auto& v : z1_fixed.data) v = (T)nd(rng);
    Tensor<T> support = blend_support<T>(s, layout, cfg.support);

    SampleResult<T> res;
    for (int i = 0; i < cfg.steps; ++i) {
        double t = 1.0 - (double)i / cfg.steps;
        double t_next = 1.0 - (double)(i + 1) / cfg.steps;
        double dt = 1.0 / cfg.steps;

        Tape<T> tape(false);
        std::vector<Var> pv = bind_params(tape, model.params);
        Var zt = tape.leaf(z);
        Var ctx = tape.leaf(z0_src);
        auto pos = dit_forward(tape, model, pv, zt, t, s.instruction, ctx, layout, cfg.routing,
                               cfg.clamp);
        auto neg = dit_forward(tape, model, pv, zt, t, null_instruction(), ctx, layout,
                               cfg.routing, cfg.clamp);
        res.trace.push_back(pos.trace);
        Tensor<T> v = cfg_combine(tape.val(pos.velocity), tape.val(neg.velocity), cfg.cfg_scale,
                                  cfg.rescale);

        for (int64_t j = 0; j < z.size(); ++j) z[j] = (T)((double)z[j] - dt * (double)v[j]);

        // blend the main segment toward the corrupted source at the new time
        Tensor<T> z_orig = noised_source(z0_src, z1_fixed, t_next);
        Tensor<T> zm = Tensor<T>::zeros({n_main, td});
        std::copy(z.data.begin(), z.data.begin() + n_main * td, zm.data.begin());
        zm = blend_step(zm, z_orig, support, cfg.alpha);
        std::copy(zm.data.begin(), zm.data.end(), z.data.begin());
    }

    Tensor<T> zm = Tensor<T>::zeros({n_main, td});
    std::copy(z.data.begin(), z.data.begin() + n_main * td, zm.data.begin());
    res.output = depatchify(zm, model.cfg.channels, layout.image_h, layout.image_w, patch);
    if (cfg.emit_subject && layout.include_subject) {
        Tensor<T> zs = Tensor<T>::zeros({n_vis - n_main, td});
        std::copy(z.data.begin() + n_main * td, z.data.end(), zs.data.begin());
        res.subject = depatchify(zs, model.cfg.channels, layout.bbox.height(),
                                 layout.bbox.width(), patch);
    }
    return res;
}

}  // namespace bridge
