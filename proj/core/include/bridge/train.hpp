#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "bridge/backbone.hpp"
#include "bridge/synth.hpp"

namespace bridge {

struct TrainConfig {
    double lr = 1e-3;
    double lr_min_frac = 0.1;  // cosine decay floor, as a fraction of lr
    double beta1 = 0.9, beta2 = 0.99;
    double adam_eps = 1e-8;
    int64_t steps = 2000;
    int batch = 8;
    double text_drop = 0.10;
    RoutingMode routing = RoutingMode::Adaptive;
    uint64_t seed = 0;
    bool main_from_source = false;  // experiment: train the main path toward the source

    void validate() const {
        if (text_drop < 0.0 || text_drop > 1.0)
            throw DataError("train config: text_drop must be in [0,1]");
        if (lr_min_frac < 0.0 || lr_min_frac > 1.0)
            throw DataError("train config: lr_min_frac must be in [0,1]");
        if (steps < 1 || batch < 1) throw DataError("train config: steps/batch must be >= 1");
    }
};

// Layout for one sample under a routing mode: the subject grid is dropped for
// the subject-free ablation.
inline PathLayout sample_layout(const EditSample& s, int patch, RoutingMode mode) {
    PathLayout l = build_layout(s.source.height, s.source.width, s.bbox, patch);
    l.include_subject = (mode != RoutingMode::NoSubject);
    return l;
}

// Clean-state tokens: the main segment patchifies the composited target (or
// the source under the experiment flag), the subject segment patchifies the
// target crop under the bbox.
template <typename T>
Tensor<T> make_targets(const EditSample& s, const PathLayout& layout,
                       bool main_from_source = false) {
    Tensor<T> main = patchify<T>(main_from_source ? s.source : s.target, layout.patch);
    if (!layout.include_subject) return main;
    Tensor<T> sub = patchify<T>(crop(s.target, layout.bbox), layout.patch);
    Tensor<T> z0 = Tensor<T>::zeros({main.shape[0] + sub.shape[0], main.shape[1]});
    std::copy(main.data.begin(), main.data.end(), z0.data.begin());
    std::copy(sub.data.begin(), sub.data.end(), z0.data.begin() + main.data.size());
    return z0;
}

template <typename T>
Tensor<T> interpolate(const Tensor<T>& z0, const Tensor<T>& z1, double t) {
    if (z0.shape != z1.shape) throw ShapeError("interpolate: shape mismatch");
    if (t < 0.0 || t > 1.0) throw DataError("interpolate: t outside [0,1]");
    Tensor<T> zt = Tensor<T>::zeros(z0.shape);
    for (int64_t i = 0; i < zt.size(); ++i) zt[i] = (T)(t * z1[i] + (1.0 - t) * z0[i]);
    return zt;
}

// MSE between the prediction and the straight-path velocity Z_1 - Z_0.
template <typename T>
Var fm_loss(Tape<T>& tape, Var v_pred, const Tensor<T>& z0, const Tensor<T>& z1) {
    if (z0.shape != z1.shape || tape.val(v_pred).shape != z0.shape)
        throw ShapeError("fm_loss: shape mismatch");
    Tensor<T> vt = Tensor<T>::zeros(z0.shape);
    for (int64_t i = 0; i < vt.size(); ++i) vt[i] = z1[i] - z0[i];
    Var diff = tape.sub(v_pred, tape.leaf(std::move(vt)));
    return tape.mean_all(tape.mul(diff, diff));
}

template <typename T>
struct AdamState {
    std::vector<Tensor<T>> m, v;
    int64_t t = 0;
};

template <typename T>
void adam_step(ParamStore<T>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& st,
               const TrainConfig& cfg) {
    if (grads.size() != params.count()) throw ShapeError("adam: gradient count mismatch");
    if (st.m.empty()) {
        for (const auto& p : params.values) {
            st.m.push_back(Tensor<T>::zeros(p.shape));
            st.v.push_back(Tensor<T>::zeros(p.shape));
        }
    }
    ++st.t;
    double bc1 = 1.0 - std::pow(cfg.beta1, (double)st.t);
    double bc2 = 1.0 - std::pow(cfg.beta2, (double)st.t);
    // cosine decay from lr to lr * lr_min_frac over cfg.steps
    double frac = cfg.steps > 1 ? (double)(st.t - 1) / (double)(cfg.steps - 1) : 0.0;
    if (frac > 1.0) frac = 1.0;
    double lr = cfg.lr * (cfg.lr_min_frac +
                          (1.0 - cfg.lr_min_frac) * 0.5 * (1.0 + std::cos(M_PI * frac)));
    for (size_t p = 0; p < params.count(); ++p) {
        Tensor<T>& w = params.values[p];
        const Tensor<T>& g = grads[p];
        for (int64_t i = 0; i < w.size(); ++i) {
            double m = cfg.beta1 * (double)st.m[p][i] + (1.0 - cfg.beta1) * (double)g[i];
            double v = cfg.beta2 * (double)st.v[p][i] + (1.0 - cfg.beta2) * (double)g[i] * g[i];
            st.m[p][i] = (T)m;
            st.v[p][i] = (T)v;
            w[i] = (T)((double)w[i] - lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.adam_eps));
        }
    }
}

struct StepLog {
    int64_t step = 0;
    double loss = 0;
    int text_dropped = 0;
    std::vector<double> gate_p_mean;  // per layer, averaged over batch and subject tokens
};

// Sequential trainer. All stochastic draws (timestep, dropout, noise) come
// from one generator in a fixed per-sample order, so a (seed, data) pair
// yields a bit-identical trajectory.
template <typename T>
class Trainer {
public:
    Trainer(DiTModel<T>& model, const TrainConfig& cfg) : model_(model), cfg_(cfg), rng_(cfg.seed) {
        cfg.validate();
    }

    const TrainConfig& config() const { return cfg_; }
    int64_t steps_done() const { return opt_.t; }

    StepLog step(const std::vector<const EditSample*>& batch) {
        if (batch.empty()) throw DataError("train step: empty batch");
        const int layers = model_.cfg.layers;
        std::vector<Tensor<T>> gsum;
        for (const auto& p : model_.params.values) gsum.push_back(Tensor<T>::zeros(p.shape));
        StepLog log;
        log.step = opt_.t + 1;
        log.gate_p_mean.assign((size_t)layers, 0.0);
        std::vector<int64_t> gate_n((size_t)layers, 0);
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        std::normal_distribution<double> nd(0.0, 1.0);

        double loss_acc = 0.0;
        for (const EditSample* sp : batch) {
            const EditSample& s = *sp;
            double t = u01(rng_);
            bool drop = u01(rng_) < cfg_.text_drop;
            if (drop) ++log.text_dropped;

            PathLayout layout = sample_layout(s, model_.cfg.patch, cfg_.routing);
            Tensor<T> z0 = make_targets<T>(s, layout, cfg_.main_from_source);
            Tensor<T> z1 = Tensor<T>::zeros(z0.shape);
            for (auto& v : z1.data) v = (T)nd(rng_);

            Tape<T> tape;
            std::vector<Var> pv = bind_params(tape, model_.params);
            Var zt = tape.leaf(interpolate(z0, z1, t));
            Var ctx = tape.leaf(patchify<T>(s.source, model_.cfg.patch));
            auto fwd = dit_forward(tape, model_, pv, zt, t,
                                   drop ? null_instruction() : s.instruction, ctx, layout,
                                   cfg_.routing);
            Var loss = fm_loss(tape, fwd.velocity, z0, z1);
            double lv = (double)tape.val(loss)[0];
            if (!std::isfinite(lv)) throw NumericError("train step: non-finite loss");
            loss_acc += lv;
            tape.backward(loss);
            for (size_t p = 0; p < gsum.size(); ++p) {
                const Tensor<T>& g = tape.grad(pv[p]);
                for (int64_t i = 0; i < g.size(); ++i) gsum[p][i] += g[i];
            }
            for (int l = 0; l < layers; ++l)
                for (double pval : fwd.trace.p[(size_t)l]) {
                    log.gate_p_mean[(size_t)l] += pval;
                    ++gate_n[(size_t)l];
                }
        }
        T inv = T(1) / (T)batch.size();
        for (auto& g : gsum)
            for (auto& v : g.data) v *= inv;
        log.loss = loss_acc / (double)batch.size();
        if (!std::isfinite(log.loss)) throw NumericError("train step: non-finite loss");
        for (int l = 0; l < layers; ++l)
            if (gate_n[(size_t)l] > 0) log.gate_p_mean[(size_t)l] /= (double)gate_n[(size_t)l];
        adam_step(model_.params, gsum, opt_, cfg_);
        return log;
    }

private:
    DiTModel<T>& model_;
    TrainConfig cfg_;
    AdamState<T> opt_;
    std::mt19937_64 rng_;
};

}  // namespace bridge
