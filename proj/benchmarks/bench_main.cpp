#include <benchmark/benchmark.h>

#include "mtriage/aggregator.hpp"
#include "mtriage/evaluation.hpp"
#include "mtriage/tessellation.hpp"
#include "mtriage/triage_sim.hpp"

using namespace mtriage;

namespace {

FeatureBag gaussian_bag(std::size_t n, std::size_t dim, std::uint64_t seed) {
    auto rng = make_rng(seed);
    FeatureBag bag;
    bag.dim = dim;
    bag.slide_ids = {"s"};
    bag.vectors.resize(n * dim);
    for (auto& v : bag.vectors) v = float(standard_normal(rng));
    for (std::size_t i = 0; i < n; ++i) bag.tiles.push_back({0, 0, std::uint32_t(i), 0});
    return bag;
}

void scores_and_labels(std::size_t n, std::vector<double>& scores, std::vector<std::uint8_t>& labels) {
    auto rng = make_rng(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels.push_back(bernoulli(rng, 0.2) ? 1 : 0);
        scores.push_back(standard_normal(rng) + labels.back());
    }
}

} // namespace

static void BM_Forward(benchmark::State& state) {
    const AggregatorConfig cfg;  // 192-dim, 2 layers, 3 heads
    const auto params = init_params<float>(cfg, 1);
    const auto bag = gaussian_bag(std::size_t(state.range(0)), 192, 2);
    for (auto _ : state) benchmark::DoNotOptimize(forward(params, bag).prob_high);
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(256)->Arg(1024);

static void BM_LossAndGrad(benchmark::State& state) {
    const AggregatorConfig cfg;
    const auto params = init_params<float>(cfg, 1);
    const auto bag = gaussian_bag(std::size_t(state.range(0)), 192, 3);
    auto rng = make_rng(4);
    for (auto _ : state) benchmark::DoNotOptimize(loss_and_grad(params, bag, Label::High, &rng).loss);
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LossAndGrad)->Arg(32)->Arg(256);

static void BM_Auroc(benchmark::State& state) {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    scores_and_labels(std::size_t(state.range(0)), scores, labels);
    for (auto _ : state) benchmark::DoNotOptimize(auroc({scores, labels}));
}
BENCHMARK(BM_Auroc)->Arg(200)->Arg(10'000);

static void BM_Bootstrap(benchmark::State& state) {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    scores_and_labels(1000, scores, labels);
    for (auto _ : state) {
        benchmark::DoNotOptimize(stratified_bootstrap_ci(auroc, {scores, labels}, 1000, 7).lower);
    }
}
BENCHMARK(BM_Bootstrap)->Unit(benchmark::kMillisecond);

static void BM_Tessellate(benchmark::State& state) {
    auto rng = make_rng(5);
    SegmentationMap map(4096, 4096);
    for (auto& t : map.tissue) t = bernoulli(rng, 0.3) ? 1 : 0;
    for (auto _ : state) benchmark::DoNotOptimize(tessellate(map, {65536, 65536}, TileParams{}).tiles.size());
}
BENCHMARK(BM_Tessellate)->Unit(benchmark::kMillisecond);

static void BM_Simulate(benchmark::State& state) {
    auto rng = make_rng(6);
    std::vector<PoolCase> pool;
    for (int i = 0; i < 2000; ++i) pool.push_back({uniform01(rng), bernoulli(rng, 0.13)});
    SimConfig cfg;
    cfg.iterations = 1000;
    for (auto _ : state) benchmark::DoNotOptimize(simulate(pool, cfg).prevented.mean);
}
BENCHMARK(BM_Simulate)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
