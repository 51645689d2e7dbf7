#include <benchmark/benchmark.h>

#include "crtmiss/datagen.hpp"

using namespace crtmiss;

static void BM_GenerateTrial(benchmark::State& state) {
  ScenarioConfig config = builtin_scenario("S1");
  config.k = static_cast<int>(state.range(0));
  config.m = 50;
  std::uint64_t rep = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(generate_trial_pair(config, SeedSpec{7, rep++}));
  }
  state.SetItemsProcessed(state.iterations() * 2 * config.k * config.m);
}
BENCHMARK(BM_GenerateTrial)->Arg(10)->Arg(50);

static void BM_CovariateMatrix(benchmark::State& state) {
  ScenarioConfig config = builtin_scenario("S1");
  config.k = 50;
  config.m = 50;
  std::uint64_t rep = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(generate_covariates(config, SeedSpec{7, rep++}));
  }
  state.SetItemsProcessed(state.iterations() * 2 * config.k * config.m);
}
BENCHMARK(BM_CovariateMatrix);
