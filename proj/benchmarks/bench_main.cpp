#include <benchmark/benchmark.h>

#include <random>

#include "bridge/backbone.hpp"
#include "bridge/blasenv.hpp"
#include "bridge/evalkit.hpp"
#include "bridge/masktools.hpp"
#include "bridge/tape.hpp"

using namespace bridge;

static void BM_Matmul(benchmark::State& state) {
    int64_t n = state.range(0);
    std::mt19937_64 rng(1);
    Tensor<float> a = Tensor<float>::randn({n, n}, rng);
    Tensor<float> b = Tensor<float>::randn({n, n}, rng);
    for (auto _ : state) {
        Tape<float> tape(false);
        Var y = tape.matmul(tape.leaf(a), tape.leaf(b));
        benchmark::DoNotOptimize(tape.val(y).data.data());
    }
    state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256)->Arg(512);

static void BM_DitForward(benchmark::State& state) {
    BackboneConfig cfg;
    GateConfig gcfg;
    DiTModel<float> model = init_model<float>(cfg, gcfg, 1);
    BBox bbox{8, 8, 16, 16};
    PathLayout layout = build_layout(32, 32, bbox, cfg.patch);
    std::mt19937_64 rng(2);
    Tensor<float> z = Tensor<float>::randn({(int64_t)layout.visual_tokens(), cfg.token_dim()}, rng);
    Tensor<float> ctx = Tensor<float>::randn({(int64_t)layout.main_tokens(), cfg.token_dim()}, rng);
    std::vector<int64_t> instr = {0, 3, 6};
    for (auto _ : state) {
        Tape<float> tape(false);
        auto pv = bind_params(tape, model.params);
        auto out = dit_forward(tape, model, pv, tape.leaf(z), 0.5, instr, tape.leaf(ctx), layout,
                               RoutingMode::Adaptive);
        benchmark::DoNotOptimize(tape.val(out.velocity).data.data());
    }
}
BENCHMARK(BM_DitForward);

static void BM_Dilate(benchmark::State& state) {
    std::mt19937_64 rng(3);
    Grid m(1, 128, 128);
    for (auto& v : m.v) v = (rng() % 4 == 0) ? 1.0 : 0.0;
    for (auto _ : state) {
        Grid d = dilate(m, 3);
        benchmark::DoNotOptimize(d.v.data());
    }
}
BENCHMARK(BM_Dilate);

static void BM_PatchEmbed(benchmark::State& state) {
    std::mt19937_64 rng(4);
    Grid g(3, 64, 64);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : g.v) v = u(rng);
    for (auto _ : state) {
        auto f = patch_embed(g);
        benchmark::DoNotOptimize(f.data());
    }
}
BENCHMARK(BM_PatchEmbed);

int main(int argc, char** argv) {
    ensure_blas_kernel(argv);
    benchmark::Initialize(&argc, argv);
    if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
    benchmark::RunSpecifiedBenchmarks();
    benchmark::Shutdown();
    return 0;
}
