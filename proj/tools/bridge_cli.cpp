// bridge: one executable for the full pipeline. Subcommands cover data
// generation, mask curation, training, sampling, sweeps, scoring and
// diagnostics. Exit codes: 0 ok, 2 bad arguments, 3 invalid data, 4 numeric
// failure. Outputs are written to a temp path and promoted atomically.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "bridge/backbone.hpp"
#include "bridge/blasenv.hpp"
#include "bridge/csv.hpp"
#include "bridge/diag.hpp"
#include "bridge/evalkit.hpp"
#include "bridge/gradcheck.hpp"
#include "bridge/masktools.hpp"
#include "bridge/sampler.hpp"
#include "bridge/synth.hpp"
#include "bridge/train.hpp"

namespace fs = std::filesystem;
using namespace bridge;

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

// ---- key=value run configuration ----

class RunConfig {
public:
    void load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw DataError("cannot open config: " + path);
        std::string line;
        int ln = 0;
        while (std::getline(f, line)) {
            ++ln;
            auto h = line.find('#');
            if (h != std::string::npos) line = line.substr(0, h);
            while (!line.empty() && (line.back() == ' ' || line.back() == '\r')) line.pop_back();
            size_t b = line.find_first_not_of(' ');
            if (b == std::string::npos) continue;
            line = line.substr(b);
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw DataError(path + ":" + std::to_string(ln) + ": expected key=value");
            kv_[line.substr(0, eq)] = line.substr(eq + 1);
        }
    }

    // Fill `val` from the file unless the flag was given explicitly.
    template <typename T>
    void merge(CLI::Option* opt, const std::string& key, T& val) {
        known_.insert(key);
        auto it = kv_.find(key);
        if (it == kv_.end()) return;
        if (opt && opt->count() > 0) return;  // explicit flag wins
        std::istringstream is(it->second);
        if constexpr (std::is_same_v<T, std::string>) {
            val = it->second;
        } else if constexpr (std::is_same_v<T, bool>) {
            val = (it->second == "1" || it->second == "true");
        } else {
            if (!(is >> val)) throw DataError("config key " + key + ": bad value '" + it->second + "'");
        }
    }

    void reject_unknown() const {
        for (const auto& [k, v] : kv_)
            if (!known_.count(k)) throw DataError("config: unknown key '" + k + "'");
    }

private:
    std::map<std::string, std::string> kv_;
    std::set<std::string> known_;
};

void write_resolved(const std::string& path,
                    const std::vector<std::pair<std::string, std::string>>& entries) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot open for write: " + path);
    for (const auto& [k, v] : entries) f << k << "=" << v << "\n";
}

// ---- atomic promotion ----

std::string tmp_of(const std::string& path) { return path + ".tmp"; }

void promote(const std::string& tmp, const std::string& final_path) {
    if (fs::exists(final_path))
        throw DataError("output already exists: " + final_path);
    fs::rename(tmp, final_path);
}

struct TmpDir {
    std::string tmp, final_path;
    explicit TmpDir(const std::string& out) : tmp(tmp_of(out)), final_path(out) {
        if (fs::exists(final_path)) throw DataError("output already exists: " + final_path);
        fs::remove_all(tmp);
        fs::create_directories(tmp);
    }
    void commit() { promote(tmp, final_path); }
};

// ---- shared option bundles ----

struct ModelOpts {
    int64_t dim = 64;
    int layers = 4, heads = 4, mlp_ratio = 4, patch = 2;
    double rope_base = 10000.0;
    int64_t gate_hidden = 64, gate_ffn = 64;
    int gate_heads = 4;

    void attach(CLI::App* c, std::map<std::string, CLI::Option*>& opts) {
        opts["model.dim"] = c->add_option("--dim", dim);
        opts["model.layers"] = c->add_option("--layers", layers);
        opts["model.heads"] = c->add_option("--heads", heads);
        opts["model.mlp_ratio"] = c->add_option("--mlp-ratio", mlp_ratio);
        opts["model.patch"] = c->add_option("--patch", patch);
        opts["model.rope_base"] = c->add_option("--rope-base", rope_base);
        opts["gate.hidden"] = c->add_option("--gate-hidden", gate_hidden);
        opts["gate.ffn"] = c->add_option("--gate-ffn", gate_ffn);
        opts["gate.heads"] = c->add_option("--gate-heads", gate_heads);
    }
    void merge(RunConfig& rc, std::map<std::string, CLI::Option*>& o) {
        rc.merge(o["model.dim"], "model.dim", dim);
        rc.merge(o["model.layers"], "model.layers", layers);
        rc.merge(o["model.heads"], "model.heads", heads);
        rc.merge(o["model.mlp_ratio"], "model.mlp_ratio", mlp_ratio);
        rc.merge(o["model.patch"], "model.patch", patch);
        rc.merge(o["model.rope_base"], "model.rope_base", rope_base);
        rc.merge(o["gate.hidden"], "gate.hidden", gate_hidden);
        rc.merge(o["gate.ffn"], "gate.ffn", gate_ffn);
        rc.merge(o["gate.heads"], "gate.heads", gate_heads);
    }
    BackboneConfig backbone() const {
        BackboneConfig b;
        b.model_dim = dim;
        b.layers = layers;
        b.heads = heads;
        b.mlp_ratio = mlp_ratio;
        b.patch = patch;
        b.rope_base = rope_base;
        return b;
    }
    GateConfig gate() const {
        GateConfig g;
        g.model_dim = dim;
        g.hidden = gate_hidden;
        g.ffn = gate_ffn;
        g.heads = gate_heads;
        return g;
    }
    void resolved(std::vector<std::pair<std::string, std::string>>& e) const {
        e.emplace_back("model.dim", std::to_string(dim));
        e.emplace_back("model.layers", std::to_string(layers));
        e.emplace_back("model.heads", std::to_string(heads));
        e.emplace_back("model.mlp_ratio", std::to_string(mlp_ratio));
        e.emplace_back("model.patch", std::to_string(patch));
        e.emplace_back("model.rope_base", fmt(rope_base));
        e.emplace_back("gate.hidden", std::to_string(gate_hidden));
        e.emplace_back("gate.ffn", std::to_string(gate_ffn));
        e.emplace_back("gate.heads", std::to_string(gate_heads));
    }
};

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ','))
        out.push_back(to_double(part, "list value"));
    if (out.empty()) throw DataError("empty value list");
    return out;
}

double bg_l1(const RegionMetrics& m, const BBox& b, int h, int w) {
    double area = (double)h * w, local = (double)b.height() * b.width();
    if (area <= local) return 0.0;
    return (m.global_l1 * area - m.local_l1 * local) / (area - local);
}

// ---- subcommand implementations ----

int cmd_gen_data(uint64_t seed, int n_train, int n_test, int side, int patch,
                 const PerturbParams& pp, const std::string& out) {
    if (n_train < 1 || n_test < 1) throw DataError("gen-data: need train and test >= 1");
    SynthConfig sc;
    sc.side = side;
    sc.patch = patch;
    sc.perturb = pp;
    int n = n_train + n_test;
    TmpDir td(out);
    DatasetManifest ds = gen_dataset(seed, n, (double)n_train / n, sc);
    write_dataset(td.tmp, ds);
    write_resolved(td.tmp + "/config.txt",
                   {{"data.seed", std::to_string(seed)},
                    {"data.train", std::to_string(n_train)},
                    {"data.test", std::to_string(n_test)},
                    {"data.side", std::to_string(side)},
                    {"data.patch", std::to_string(patch)},
                    {"perturb.dilate_min", std::to_string(pp.dilate_min)},
                    {"perturb.dilate_max", std::to_string(pp.dilate_max)},
                    {"perturb.boundary_noise", fmt(pp.boundary_noise)},
                    {"perturb.feather_sigma", fmt(pp.feather_sigma)}});
    td.commit();
    std::cout << "wrote " << ds.train.size() << " train + " << ds.test.size() << " test to "
              << out << "\n";
    return 0;
}

int cmd_train(const ModelOpts& mo, const TrainConfig& tc, const std::string& data,
              const std::string& out) {
    std::vector<EditSample> samples = load_manifest(data + "/train.csv", mo.patch);
    if (samples.empty()) throw DataError("train: empty manifest");
    DiTModel<float> model = init_model<float>(mo.backbone(), mo.gate(), tc.seed);
    TrainConfig tcfg = tc;
    tcfg.seed = tc.seed + 1;  // trainer noise stream is distinct from init
    Trainer<float> trainer(model, tcfg);

    TmpDir td(out);
    CsvTable log;
    log.header = {"step", "loss", "text_dropped"};
    for (int l = 0; l < mo.layers; ++l) log.header.push_back("gate_p_l" + std::to_string(l));
    int n = (int)samples.size();
    for (int64_t step = 0; step < tcfg.steps; ++step) {
        std::vector<const EditSample*> batch;
        for (int j = 0; j < tcfg.batch; ++j)
            batch.push_back(&samples[(size_t)((step * tcfg.batch + j) % n)]);
        StepLog sl = trainer.step(batch);
        std::vector<std::string> row = {std::to_string(sl.step), fmt(sl.loss),
                                        std::to_string(sl.text_dropped)};
        for (double p : sl.gate_p_mean) row.push_back(fmt(p));
        log.rows.push_back(std::move(row));
        if ((step + 1) % 100 == 0)
            std::cerr << "step " << (step + 1) << "/" << tcfg.steps << " loss " << sl.loss
                      << "\n";
    }
    save_model(td.tmp, model);
    write_csv(td.tmp + "/train_log.csv", log);
    std::vector<std::pair<std::string, std::string>> e;
    mo.resolved(e);
    e.emplace_back("train.lr", fmt(tcfg.lr));
    e.emplace_back("train.steps", std::to_string(tcfg.steps));
    e.emplace_back("train.batch", std::to_string(tcfg.batch));
    e.emplace_back("train.text_drop", fmt(tcfg.text_drop));
    e.emplace_back("train.routing", routing_name(tcfg.routing));
    e.emplace_back("train.seed", std::to_string(tc.seed));
    e.emplace_back("train.main_from_source", tcfg.main_from_source ? "1" : "0");
    e.emplace_back("train.data", data);
    write_resolved(td.tmp + "/config.txt", e);
    td.commit();
    std::cout << "checkpoint written to " << out << "\n";
    return 0;
}

void write_trace_csv(const std::string& path, const std::vector<GateTrace>& traces) {
    CsvTable t;
    t.header = {"step", "layer", "token", "p", "g"};
    for (size_t s = 0; s < traces.size(); ++s)
        for (size_t l = 0; l < traces[s].p.size(); ++l)
            for (size_t i = 0; i < traces[s].p[l].size(); ++i)
                t.rows.push_back({std::to_string(s), std::to_string(l), std::to_string(i),
                                  fmt(traces[s].p[l][i]), fmt(traces[s].g[l][i])});
    write_csv(path, t);
}

EditSample find_sample(const std::string& manifest, int patch, int64_t id) {
    for (auto& s : load_manifest(manifest, patch))
        if (s.id == id) return s;
    throw DataError("sample id " + std::to_string(id) + " not in " + manifest);
}

int cmd_sample(const std::string& ckpt, const std::string& manifest, int64_t id,
               const SampleConfig& sc, const std::string& out) {
    DiTModel<float> model = load_model<float>(ckpt);
    EditSample s = find_sample(manifest, model.cfg.patch, id);
    SampleResult<float> res = sample(model, s, sc);
    TmpDir td(out);
    save_ppm(td.tmp + "/output.ppm", res.output);
    if (sc.emit_subject && res.subject.size() > 0)
        save_ppm(td.tmp + "/subject.ppm", res.subject);
    write_trace_csv(td.tmp + "/trace.csv", res.trace);
    write_resolved(td.tmp + "/config.txt",
                   {{"sample.ckpt", ckpt},
                    {"sample.manifest", manifest},
                    {"sample.id", std::to_string(id)},
                    {"sample.steps", std::to_string(sc.steps)},
                    {"sample.cfg", fmt(sc.cfg_scale)},
                    {"sample.rescale", sc.rescale ? "1" : "0"},
                    {"sample.alpha", fmt(sc.alpha)},
                    {"sample.support", sc.support == BlendSupport::BBoxTokens ? "bbox" : "mask"},
                    {"sample.seed", std::to_string(sc.seed)},
                    {"sample.routing", routing_name(sc.routing)},
                    {"sample.emit_subject", sc.emit_subject ? "1" : "0"}});
    td.commit();
    std::cout << "sample written to " << out << "\n";
    return 0;
}

int cmd_sweep(const std::string& ckpt, const std::string& manifest, int64_t id,
              const std::vector<double>& cfgs, const std::vector<double>& alphas,
              SampleConfig sc, const std::string& out) {
    DiTModel<float> model = load_model<float>(ckpt);
    EditSample s = find_sample(manifest, model.cfg.patch, id);
    CsvTable t;
    t.header = {"cfg", "alpha", "local_l1", "local_l2", "global_l1", "global_l2", "bg_l1"};
    for (double c : cfgs)
        for (double a : alphas) {
            sc.cfg_scale = c;
            sc.alpha = a;
            SampleResult<float> res = sample(model, s, sc);
            RegionMetrics m = region_metrics(res.output, s.target, s.bbox);
            t.rows.push_back({fmt(c), fmt(a), fmt(m.local_l1), fmt(m.local_l2),
                              fmt(m.global_l1), fmt(m.global_l2),
                              fmt(bg_l1(m, s.bbox, s.target.height, s.target.width))});
        }
    write_csv(tmp_of(out), t);
    promote(tmp_of(out), out);
    std::cout << "sweep written to " << out << "\n";
    return 0;
}

int cmd_eval(const std::string& pred, const std::string& manifest, int patch,
             const std::string& out) {
    CsvTable t;
    t.header = {"id", "local_l1", "local_l2", "global_l1", "global_l2"};
    for (const auto& s : load_manifest(manifest, patch)) {
        std::string p = pred + "/" + std::to_string(s.id) + ".ppm";
        Grid g = load_ppm(p);
        RegionMetrics m = region_metrics(g, s.target, s.bbox);
        t.rows.push_back({std::to_string(s.id), fmt(m.local_l1), fmt(m.local_l2),
                          fmt(m.global_l1), fmt(m.global_l2)});
    }
    write_csv(tmp_of(out), t);
    promote(tmp_of(out), out);
    return 0;
}

int cmd_score(const std::string& raw, const std::string& out, double tol) {
    CsvTable in = read_csv(raw);
    auto col = [&](const char* n) {
        int c = in.column(n);
        if (c < 0) throw DataError(std::string("score: missing column ") + n);
        return c;
    };
    int ci = in.column("id");
    int ca = col("aesthetic"), cm = col("imaging"), cc = col("clip_cap"), cq = col("vllm_qa"),
        cs = col("clip_src"), cl = col("l1_src");
    int ce = in.column("expected");  // optional reference scores to reconcile
    CsvTable o;
    o.header = {"id", "s_aes", "s_img", "s_pf", "s_src", "task_score"};
    if (ce >= 0) {
        o.header.push_back("expected");
        o.header.push_back("flag");
    }
    for (size_t r = 0; r < in.rows.size(); ++r) {
        const auto& row = in.rows[r];
        RawMetrics rm;
        rm.aesthetic = to_double(row[(size_t)ca], "aesthetic");
        rm.imaging = to_double(row[(size_t)cm], "imaging");
        rm.clip_cap = to_double(row[(size_t)cc], "clip_cap");
        rm.vllm_qa = to_double(row[(size_t)cq], "vllm_qa");
        rm.clip_src = to_double(row[(size_t)cs], "clip_src");
        rm.l1_src = to_double(row[(size_t)cl], "l1_src");
        ScoreRecord sr = ice_dimensions(rm);
        std::string id = ci >= 0 ? row[(size_t)ci] : std::to_string(r);
        std::vector<std::string> orow = {id, fmt(sr.s_aes), fmt(sr.s_img), fmt(sr.s_pf),
                                         fmt(sr.s_src), fmt(sr.task_score)};
        std::string note;
        if (ce >= 0) {
            double exp = to_double(row[(size_t)ce], "expected");
            bool mismatch = std::abs(exp - sr.task_score) > tol;
            orow.push_back(fmt(exp));
            orow.push_back(mismatch ? "mapping_mismatch" : "ok");
            if (mismatch) note = " flag=mapping_mismatch expected=" + fmt(exp);
        }
        std::cout << "id=" << id << " task_score=" << fmt(sr.task_score) << note << "\n";
        o.rows.push_back(std::move(orow));
    }
    if (!out.empty()) {
        write_csv(tmp_of(out), o);
        promote(tmp_of(out), out);
    }
    return 0;
}

int cmd_rank_table(const std::string& table, const std::string& out) {
    CsvTable in = read_csv(table);
    if (in.header.empty() || in.rows.size() < 3)
        throw DataError("rank-table: need a direction row and >= 2 method rows");
    size_t metrics = in.header.size() - 1;
    if (in.rows[0].empty() || in.rows[0][0] != "direction")
        throw DataError("rank-table: first data row must be the direction row");
    std::vector<bool> higher(metrics);
    for (size_t j = 0; j < metrics; ++j) {
        const std::string& d = in.rows[0][j + 1];
        if (d != "+" && d != "-") throw DataError("rank-table: direction must be + or -");
        higher[j] = (d == "+");
    }
    std::vector<std::string> names;
    std::vector<std::vector<double>> vals;
    for (size_t r = 1; r < in.rows.size(); ++r) {
        names.push_back(in.rows[r][0]);
        std::vector<double> row;
        for (size_t j = 0; j < metrics; ++j)
            row.push_back(to_double(in.rows[r][j + 1], "rank-table cell"));
        vals.push_back(std::move(row));
    }
    std::vector<double> ranks = avg_rank(vals, higher);
    CsvTable o;
    o.header = {"method", "avg_rank"};
    for (size_t i = 0; i < names.size(); ++i) {
        o.rows.push_back({names[i], fmt(ranks[i])});
        std::cout << names[i] << " " << fmt(ranks[i]) << "\n";
    }
    if (!out.empty()) {
        write_csv(tmp_of(out), o);
        promote(tmp_of(out), out);
    }
    return 0;
}

int cmd_audit(const std::string& manifest, int patch, const AuditThresholds& th,
              const std::string& out) {
    CsvTable t;
    t.header = {"id", "d_obj", "d_bg", "verdict", "reason"};
    for (const auto& s : load_manifest(manifest, patch)) {
        auto [d_obj, d_bg] = audit_distances(s.source, s.target, s.coarse_mask);
        AuditVerdict v = dual_audit_filter(d_obj, d_bg, th);
        t.rows.push_back({std::to_string(s.id), fmt(d_obj), fmt(d_bg),
                          v.keep ? "keep" : "reject", v.reason});
    }
    write_csv(tmp_of(out), t);
    promote(tmp_of(out), out);
    return 0;
}

int cmd_rank(const std::string& in_csv, int top_k, const std::string& out) {
    CsvTable in = read_csv(in_csv);
    int ci = in.column("id"), cs = in.column("seam"), cb = in.column("bg");
    if (ci < 0 || cs < 0 || cb < 0) throw DataError("rank: need id,seam,bg columns");
    std::vector<RankCandidate> cands;
    for (const auto& r : in.rows)
        cands.push_back({to_int(r[(size_t)ci], "id"), to_double(r[(size_t)cs], "seam"),
                         to_double(r[(size_t)cb], "bg")});
    RankResult res = rank_candidates(cands, top_k);
    if (res.short_of_k) std::cerr << "warning: top-k exceeds survivor count\n";
    CsvTable o;
    o.header = {"id", "seam", "bg", "composite", "rank", "split"};
    for (const auto& c : res.ordered)
        o.rows.push_back({std::to_string(c.id), fmt(c.seam), fmt(c.bg), fmt(c.composite),
                          std::to_string(c.rank), c.top_k ? "curated" : "rest"});
    for (int64_t id : res.prefiltered_ids)
        o.rows.push_back({std::to_string(id), "", "", "", "", "prefiltered"});
    write_csv(tmp_of(out), o);
    promote(tmp_of(out), out);
    return 0;
}

int cmd_diag_pe(const std::string& mode, int trials, uint64_t seed, const std::string& out) {
    DiagConfig dc;
    dc.trials = trials;
    dc.seed = seed;
    CsvTable t;
    if (mode == "masked") {
        double w = masked_pair_weight(dc);
        t.header = {"mode", "max_masked_weight"};
        t.rows.push_back({"masked", fmt(w)});
        std::cout << "max masked attention weight: " << fmt(w) << "\n";
    } else if (mode == "shared" || mode == "distinct") {
        DiagResult r = attention_coupling(dc);
        t.header = {"mode", "trials", "shared_wins", "mean_shared", "mean_distinct", "p_value"};
        t.rows.push_back({mode, std::to_string(r.trials), std::to_string(r.shared_wins),
                          fmt(r.mean_shared), fmt(r.mean_distinct), fmt(r.p_value)});
        std::cout << "coupling: shared " << fmt(r.mean_shared) << " vs distinct "
                  << fmt(r.mean_distinct) << " (wins " << r.shared_wins << "/" << r.trials
                  << ", sign-test p " << fmt(r.p_value) << ")\n";
    } else {
        throw DataError("diag-pe: mode must be shared, distinct or masked");
    }
    if (!out.empty()) {
        write_csv(tmp_of(out), t);
        promote(tmp_of(out), out);
    }
    return 0;
}

}  // namespace

int run(int argc, char** argv) {
    CLI::App app{"dual-path local-edit toolkit"};
    app.require_subcommand(1);

    // gen-data
    auto* gd = app.add_subcommand("gen-data", "generate a synthetic edit dataset");
    uint64_t gd_seed = 0;
    int gd_train = 512, gd_test = 64, gd_side = 32, gd_patch = 2;
    PerturbParams gd_pp;
    std::string gd_out;
    gd->add_option("--seed", gd_seed);
    gd->add_option("--train", gd_train);
    gd->add_option("--test", gd_test);
    gd->add_option("--side", gd_side);
    gd->add_option("--patch", gd_patch);
    gd->add_option("--dilate-min", gd_pp.dilate_min);
    gd->add_option("--dilate-max", gd_pp.dilate_max);
    gd->add_option("--noise", gd_pp.boundary_noise);
    gd->add_option("--sigma", gd_pp.feather_sigma);
    gd->add_option("--out", gd_out)->required();

    // mask-perturb
    auto* mp = app.add_subcommand("mask-perturb", "coarsen a mask");
    std::string mp_in, mp_out;
    PerturbParams mp_pp;
    mp->add_option("--in", mp_in)->required();
    mp->add_option("--out", mp_out)->required();
    mp->add_option("--seed", mp_pp.seed);
    mp->add_option("--dilate-min", mp_pp.dilate_min);
    mp->add_option("--dilate-max", mp_pp.dilate_max);
    mp->add_option("--noise", mp_pp.boundary_noise);
    mp->add_option("--sigma", mp_pp.feather_sigma);

    // composite
    auto* cp = app.add_subcommand("composite", "feathered paste of target onto source");
    std::string cp_src, cp_tgt, cp_mask, cp_out;
    double cp_sigma = 1.0;
    cp->add_option("--src", cp_src)->required();
    cp->add_option("--tgt", cp_tgt)->required();
    cp->add_option("--mask", cp_mask)->required();
    cp->add_option("--sigma", cp_sigma);
    cp->add_option("--out", cp_out)->required();

    // audit
    auto* au = app.add_subcommand("audit", "dual audit over a manifest");
    std::string au_manifest, au_out;
    int au_patch = 2;
    AuditThresholds au_th;
    au->add_option("--manifest", au_manifest)->required();
    au->add_option("--patch", au_patch);
    au->add_option("--d-obj-min", au_th.d_obj_min);
    au->add_option("--d-bg-max", au_th.d_bg_max);
    au->add_option("--out", au_out)->required();

    // rank
    auto* rk = app.add_subcommand("rank", "composite-quality ranking of candidates");
    std::string rk_in, rk_out;
    int rk_topk = 10;
    rk->add_option("--in", rk_in)->required();
    rk->add_option("--top-k", rk_topk);
    rk->add_option("--out", rk_out)->required();

    // train
    auto* tr = app.add_subcommand("train", "flow-matching training");
    std::map<std::string, CLI::Option*> tr_opts;
    ModelOpts tr_mo;
    tr_mo.attach(tr, tr_opts);
    TrainConfig tr_tc;
    std::string tr_routing = "adaptive", tr_data, tr_out, tr_cfgfile;
    tr_opts["train.lr"] = tr->add_option("--lr", tr_tc.lr);
    tr_opts["train.steps"] = tr->add_option("--steps", tr_tc.steps);
    tr_opts["train.batch"] = tr->add_option("--batch", tr_tc.batch);
    tr_opts["train.text_drop"] = tr->add_option("--text-drop", tr_tc.text_drop);
    tr_opts["train.routing"] = tr->add_option("--routing", tr_routing);
    tr_opts["train.seed"] = tr->add_option("--seed", tr_tc.seed);
    tr_opts["train.main_from_source"] = tr->add_flag("--main-from-source", tr_tc.main_from_source);
    tr_opts["train.data"] = tr->add_option("--data", tr_data);
    tr->add_option("--out", tr_out)->required();
    tr->add_option("--config", tr_cfgfile);

    // sample
    auto* sm = app.add_subcommand("sample", "generate one edit from a checkpoint");
    std::string sm_ckpt, sm_manifest, sm_out, sm_support = "bbox", sm_routing = "adaptive";
    int64_t sm_id = 0;
    SampleConfig sm_sc;
    bool sm_norescale = false;
    sm->add_option("--ckpt", sm_ckpt)->required();
    sm->add_option("--manifest", sm_manifest)->required();
    sm->add_option("--id", sm_id)->required();
    sm->add_option("--steps", sm_sc.steps);
    sm->add_option("--cfg", sm_sc.cfg_scale);
    sm->add_option("--alpha", sm_sc.alpha);
    sm->add_option("--support", sm_support);
    sm->add_option("--seed", sm_sc.seed);
    sm->add_option("--routing", sm_routing);
    sm->add_flag("--emit-subject", sm_sc.emit_subject);
    sm->add_flag("--no-rescale", sm_norescale);
    sm->add_option("--out", sm_out)->required();

    // sweep
    auto* sw = app.add_subcommand("sweep", "grid over cfg scale and blend strength");
    std::string sw_ckpt, sw_manifest, sw_out, sw_cfgs = "1,2,4", sw_alphas = "0,0.1,0.4,0.7,1.0";
    std::string sw_support = "bbox";
    int64_t sw_id = 0;
    SampleConfig sw_sc;
    sw->add_option("--ckpt", sw_ckpt)->required();
    sw->add_option("--manifest", sw_manifest)->required();
    sw->add_option("--id", sw_id)->required();
    sw->add_option("--cfg", sw_cfgs);
    sw->add_option("--alpha", sw_alphas);
    sw->add_option("--steps", sw_sc.steps);
    sw->add_option("--seed", sw_sc.seed);
    sw->add_option("--support", sw_support);
    sw->add_option("--out", sw_out)->required();

    // eval
    auto* ev = app.add_subcommand("eval", "region metrics of predictions against a manifest");
    std::string ev_pred, ev_manifest, ev_out;
    int ev_patch = 2;
    ev->add_option("--pred", ev_pred)->required();
    ev->add_option("--manifest", ev_manifest)->required();
    ev->add_option("--patch", ev_patch);
    ev->add_option("--out", ev_out)->required();

    // score
    auto* sc = app.add_subcommand("score", "dimension mapping and task scores");
    std::string sc_raw, sc_out;
    double sc_tol = 1e-3;
    sc->add_option("--raw", sc_raw)->required();
    sc->add_option("--out", sc_out);
    sc->add_option("--tol", sc_tol);

    // rank-table
    auto* rt = app.add_subcommand("rank-table", "average ranks over a metric table");
    std::string rt_table, rt_out;
    rt->add_option("--table", rt_table)->required();
    rt->add_option("--out", rt_out);

    // grad-check
    auto* gc = app.add_subcommand("grad-check", "finite-difference gradient audit");
    int gc_trials = 25;
    uint64_t gc_seed = 1;
    int64_t gc_coords = 2;
    double gc_eps = 1e-5, gc_tol = 1e-4;
    gc->add_option("--trials", gc_trials);
    gc->add_option("--seed", gc_seed);
    gc->add_option("--coords", gc_coords);
    gc->add_option("--eps", gc_eps);
    gc->add_option("--tol", gc_tol);

    // diag-pe
    auto* dp = app.add_subcommand("diag-pe", "attention-coupling diagnostic");
    std::string dp_mode = "shared", dp_out;
    int dp_trials = 200;
    uint64_t dp_seed = 1;
    dp->add_option("--mode", dp_mode);
    dp->add_option("--trials", dp_trials);
    dp->add_option("--seed", dp_seed);
    dp->add_option("--out", dp_out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int r = app.exit(e);
        return r == 0 ? 0 : 2;  // bad arguments
    }

    if (gd->parsed())
        return cmd_gen_data(gd_seed, gd_train, gd_test, gd_side, gd_patch, gd_pp, gd_out);
    if (mp->parsed()) {
        Grid m = load_pgm(mp_in);
        Grid out = perturb_mask(m, mp_pp);
        save_pgm(tmp_of(mp_out), out);
        promote(tmp_of(mp_out), mp_out);
        return 0;
    }
    if (cp->parsed()) {
        Grid out = forced_composite(load_ppm(cp_src), load_ppm(cp_tgt), load_pgm(cp_mask),
                                    cp_sigma);
        save_ppm(tmp_of(cp_out), out);
        promote(tmp_of(cp_out), cp_out);
        return 0;
    }
    if (au->parsed()) return cmd_audit(au_manifest, au_patch, au_th, au_out);
    if (rk->parsed()) return cmd_rank(rk_in, rk_topk, rk_out);
    if (tr->parsed()) {
        RunConfig rc;
        if (!tr_cfgfile.empty()) rc.load(tr_cfgfile);
        tr_mo.merge(rc, tr_opts);
        rc.merge(tr_opts["train.lr"], "train.lr", tr_tc.lr);
        rc.merge(tr_opts["train.steps"], "train.steps", tr_tc.steps);
        rc.merge(tr_opts["train.batch"], "train.batch", tr_tc.batch);
        rc.merge(tr_opts["train.text_drop"], "train.text_drop", tr_tc.text_drop);
        rc.merge(tr_opts["train.routing"], "train.routing", tr_routing);
        rc.merge(tr_opts["train.seed"], "train.seed", tr_tc.seed);
        rc.merge(tr_opts["train.main_from_source"], "train.main_from_source",
                 tr_tc.main_from_source);
        rc.merge(tr_opts["train.data"], "train.data", tr_data);
        rc.reject_unknown();
        if (tr_data.empty()) throw DataError("train: --data (or train.data) is required");
        tr_tc.routing = routing_from_name(tr_routing);
        return cmd_train(tr_mo, tr_tc, tr_data, tr_out);
    }
    if (sm->parsed()) {
        sm_sc.rescale = !sm_norescale;
        sm_sc.routing = routing_from_name(sm_routing);
        if (sm_support == "bbox") sm_sc.support = BlendSupport::BBoxTokens;
        else if (sm_support == "mask") sm_sc.support = BlendSupport::PixelMask;
        else throw DataError("sample: support must be bbox or mask");
        return cmd_sample(sm_ckpt, sm_manifest, sm_id, sm_sc, sm_out);
    }
    if (sw->parsed()) {
        if (sw_support == "bbox") sw_sc.support = BlendSupport::BBoxTokens;
        else if (sw_support == "mask") sw_sc.support = BlendSupport::PixelMask;
        else throw DataError("sweep: support must be bbox or mask");
        return cmd_sweep(sw_ckpt, sw_manifest, sw_id, parse_list(sw_cfgs),
                         parse_list(sw_alphas), sw_sc, sw_out);
    }
    if (ev->parsed()) return cmd_eval(ev_pred, ev_manifest, ev_patch, ev_out);
    if (sc->parsed()) return cmd_score(sc_raw, sc_out, sc_tol);
    if (rt->parsed()) return cmd_rank_table(rt_table, rt_out);
    if (gc->parsed()) {
        GradCheckReport rep = run_grad_check(gc_trials, gc_seed, gc_coords, gc_eps);
        for (size_t i = 0; i < rep.per_trial.size(); ++i)
            std::cout << "trial " << i << " max rel err " << fmt(rep.per_trial[i]) << "\n";
        std::cout << "overall max rel err " << fmt(rep.max_rel_err) << " (tol " << fmt(gc_tol)
                  << ")\n";
        if (rep.max_rel_err >= gc_tol) throw NumericError("grad-check: tolerance exceeded");
        return 0;
    }
    if (dp->parsed()) return cmd_diag_pe(dp_mode, dp_trials, dp_seed, dp_out);
    return 2;
}

int main(int argc, char** argv) {
    ensure_blas_kernel(argv);
    try {
        return run(argc, argv);
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
