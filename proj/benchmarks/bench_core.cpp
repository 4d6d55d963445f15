#include <benchmark/benchmark.h>

#include <random>

#include "rackctl/control.hpp"
#include "rackctl/forecast.hpp"
#include "rackctl/gpu.hpp"
#include "rackctl/thermo.hpp"

using namespace rackctl;

static void PlantStep(benchmark::State& state) {
    const size_t n = state.range(0);
    ThermalCoefficients c;
    c.supply_fraction = ThermalCoefficients::uniform_fractions(n);
    c.leakage_flow = 0.0004;
    RackState s = RackState::uniform(n, 30.0);
    std::vector<double> powers(n, 450.0);
    CoolingCommand cmd{20.0, 0.02};
    for (auto _ : state) {
        s = step_rack(s, cmd, powers, c, 30.0, 1.0);
        benchmark::DoNotOptimize(s.hot.data());
    }
    state.SetItemsProcessed(state.iterations() * 30); // one-second substeps
}
BENCHMARK(PlantStep)->Arg(2)->Arg(4)->Arg(8);

static void CoolingPlan(benchmark::State& state) {
    PlantModel plant;
    plant.thermo.supply_fraction = ThermalCoefficients::uniform_fractions(4);
    plant.thermo.leakage_flow = 0.0004;
    MpcConfig cfg;
    RackState s = RackState::uniform(4, 32.0);
    for (auto& v : s.exhaust) v = 55.0;
    for (auto& v : s.hot) v = 58.0;
    std::vector<double> powers(4, 380.0);
    std::vector<double> temps(32, 40.0), die(32, 90.0);
    std::vector<int> gmap(32);
    for (int g = 0; g < 32; ++g) gmap[g] = g / 8;
    for (auto _ : state) {
        auto r = plan_cooling(s, {powers}, temps, die, gmap, cfg, plant);
        benchmark::DoNotOptimize(r.command);
    }
}
BENCHMARK(CoolingPlan);

static void PoolSelection(benchmark::State& state) {
    auto tables = ProfileTables::bundled();
    TpMixOptions opt;
    opt.gpu_budget = static_cast<int>(state.range(0));
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> demand(10000.0, 500000.0);
    for (auto _ : state) {
        TpMix mix = select_tp_mix(demand(rng), opt, tables);
        benchmark::DoNotOptimize(mix.pool_counts);
    }
}
BENCHMARK(PoolSelection)->Arg(8)->Arg(16)->Arg(32);

static void FrequencySelection(benchmark::State& state) {
    auto tables = ProfileTables::bundled();
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> tokens(100.0, 4000.0);
    for (auto _ : state) {
        auto fc = select_frequency(tokens(rng), 3.9, 50.0, tables);
        benchmark::DoNotOptimize(fc.freq_mhz);
    }
}
BENCHMARK(FrequencySelection);

static void ForecastForward(benchmark::State& state) {
    std::vector<IntervalLoad> series(64);
    for (int i = 0; i < 64; ++i) {
        series[i].context_tokens = 1000 + 300 * std::sin(i / 7.0);
        series[i].generated_tokens = 600 + 200 * std::cos(i / 5.0);
    }
    TrainOptions opt;
    opt.lookback = 16;
    opt.hidden = 24;
    opt.epochs = 2;
    auto model = train_forecaster(series, opt);
    for (auto _ : state) {
        benchmark::DoNotOptimize(forecast_next(model, series));
    }
}
BENCHMARK(ForecastForward);

BENCHMARK_MAIN();
