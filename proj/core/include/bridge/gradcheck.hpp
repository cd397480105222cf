#pragma once

#include <algorithm>
#include <random>
#include <vector>

#include "bridge/backbone.hpp"
#include "bridge/train.hpp"

namespace bridge {

struct GradCheckReport {
    int trials = 0;
    double max_rel_err = 0.0;
    std::vector<double> per_trial;
};

// Finite-difference audit of the full forward + routing + loss composition on
// random tiny configurations. Gate heads are nudged off zero so no routing
// probability sits near the 0.5 threshold (the hard forward is discontinuous
// there and central differences would cross it).
inline GradCheckReport run_grad_check(int trials, uint64_t seed, int64_t coords_per_tensor = 2,
                                      double eps = 1e-5) {
    GradCheckReport rep;
    rep.trials = trials;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> nd(0.0, 1.0);

    for (int trial = 0; trial < trials; ++trial) {
        BackboneConfig cfg;
        cfg.model_dim = 16;
        cfg.layers = 2;
        cfg.heads = 2;
        cfg.mlp_ratio = 2;
        cfg.patch = 2;
        GateConfig gcfg;
        gcfg.model_dim = 16;
        gcfg.hidden = 8;
        gcfg.ffn = 8;
        gcfg.heads = 2;
        SynthConfig sc;
        sc.side = 8;
        sc.patch = 2;

        EditSample s = gen_triplet(rng(), (EditOp)(rng() % 3), sc);
        PathLayout layout = sample_layout(s, 2, RoutingMode::Adaptive);
        double t = 0.05 + 0.9 * u01(rng);
        Tensor<double> z0 = make_targets<double>(s, layout);
        Tensor<double> z1 = Tensor<double>::zeros(z0.shape);
        for (auto& v : z1.data) v = nd(rng);
        Tensor<double> zt = interpolate(z0, z1, t);
        Tensor<double> ctx = patchify<double>(s.source, 2);

        DiTModel<double> model = init_model<double>(cfg, gcfg, rng());
        auto run = [&](const std::vector<Tensor<double>>& params, GateTrace* trace) {
            DiTModel<double> m = model;
            m.params.values = params;
            Tape<double> tape(false);
            auto pv = bind_params(tape, m.params);
            auto fwd = dit_forward(tape, m, pv, tape.leaf(zt), t, s.instruction, tape.leaf(ctx),
                                   layout, RoutingMode::Adaptive);
            if (trace) *trace = fwd.trace;
            Var loss = fm_loss(tape, fwd.velocity, z0, z1);
            return (double)tape.val(loss)[0];
        };

        // move every gate probability away from the threshold, retrying with a
        // larger bias push if a p lands within 1e-3 of 0.5
        for (int push = 0;; ++push) {
            if (push > 8) throw NumericError("grad check: cannot clear the gate threshold");
            for (int l = 0; l < cfg.layers; ++l) {
                const GateParamIds& g = model.gate_ids[(size_t)l];
                for (auto& v : model.params.values[(size_t)g.head_w].data)
                    v = 0.2 * nd(rng);
                model.params.values[(size_t)g.head_b][0] =
                    (u01(rng) < 0.5 ? -1.0 : 1.0) * (0.4 + 0.2 * push);
            }
            GateTrace trace;
            run(model.params.values, &trace);
            double margin = 1.0;
            for (const auto& layer : trace.p)
                for (double p : layer) margin = std::min(margin, std::abs(p - 0.5));
            if (margin > 1e-3) break;
        }

        Tape<double> tape;
        auto pv = bind_params(tape, model.params);
        auto fwd = dit_forward(tape, model, pv, tape.leaf(zt), t, s.instruction, tape.leaf(ctx),
                               layout, RoutingMode::Adaptive);
        Var loss = fm_loss(tape, fwd.velocity, z0, z1);
        tape.backward(loss);
        std::vector<Tensor<double>> grads;
        for (auto v : pv) grads.push_back(tape.grad(v));

        double err = finite_diff_check_sampled(
            [&](const std::vector<Tensor<double>>& x) { return run(x, nullptr); },
            model.params.values, grads, eps, coords_per_tensor, rng);
        rep.per_trial.push_back(err);
        rep.max_rel_err = std::max(rep.max_rel_err, err);
    }
    return rep;
}

}  // namespace bridge
