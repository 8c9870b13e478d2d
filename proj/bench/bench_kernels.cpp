// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include "fracal/calibration.hpp"
#include "fracal/evalharness.hpp"
#include "fracal/fractal.hpp"
#include "fracal/pipeline.hpp"
#include "fracal/synthetic.hpp"

using namespace fracal;

namespace {

struct Fixture {
    SimulatedBatch batch;
    TrainStatistics stats;
    std::vector<Detection> detections;

    Fixture()
        : batch(simulate_scenario(ScenarioSpec::standard())),
          stats(train_statistics(batch.train)) {
        const auto scores = calibrate_batch(batch.proposals, batch.header.mode, stats.weights,
                                            parse_method("fracal"));
        detections = expand_scores({batch.header, scores});
    }
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

void BM_EstimateAll_Serial(benchmark::State& state) {
    const auto& f = fixture();
    for (auto _ : state) benchmark::DoNotOptimize(reference::estimate_all(f.batch.train));
}

void BM_EstimateAll_Parallel(benchmark::State& state) {
    const auto& f = fixture();
    for (auto _ : state) benchmark::DoNotOptimize(estimate_all(f.batch.train));
}

void BM_Calibrate_Serial(benchmark::State& state) {
    const auto& f = fixture();
    const auto m = parse_method("fracal");
    for (auto _ : state) {
        benchmark::DoNotOptimize(reference::calibrate_batch(f.batch.proposals, f.batch.header.mode, f.stats.weights, m));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.batch.proposals.size()));
}

void BM_Calibrate_Parallel(benchmark::State& state) {
    const auto& f = fixture();
    const auto m = parse_method("fracal");
    for (auto _ : state) {
        benchmark::DoNotOptimize(calibrate_batch(f.batch.proposals, f.batch.header.mode, f.stats.weights, m));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.batch.proposals.size()));
}

void BM_Postprocess_Serial(benchmark::State& state) {
    const auto& f = fixture();
    for (auto _ : state) benchmark::DoNotOptimize(reference::postprocess(f.detections));
}

void BM_Postprocess_Parallel(benchmark::State& state) {
    const auto& f = fixture();
    for (auto _ : state) benchmark::DoNotOptimize(postprocess(f.detections));
}

void BM_Evaluate_Serial(benchmark::State& state) {
    const auto& f = fixture();
    const auto kept = postprocess(f.detections).detections;
    const auto groups = f.stats.groups();
    for (auto _ : state) benchmark::DoNotOptimize(reference::evaluate(kept, f.batch.ground_truth, groups));
}

void BM_Evaluate_Parallel(benchmark::State& state) {
    const auto& f = fixture();
    const auto kept = postprocess(f.detections).detections;
    const auto groups = f.stats.groups();
    for (auto _ : state) benchmark::DoNotOptimize(evaluate(kept, f.batch.ground_truth, groups));
}

}  // namespace

BENCHMARK(BM_EstimateAll_Serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EstimateAll_Parallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Calibrate_Serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Calibrate_Parallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Postprocess_Serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Postprocess_Parallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Evaluate_Serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Evaluate_Parallel)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
