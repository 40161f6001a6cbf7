// Serial reference kernels against their OpenMP versions.

#include <benchmark/benchmark.h>

#include <vector>

#include "pacbayes/bound.hpp"
#include "pacbayes/concentration.hpp"
#include "pacbayes/dataset.hpp"
#include "pacbayes/network.hpp"
#include "pacbayes/serial.hpp"

namespace {

using namespace pacbayes;

struct Fixture {
  LabeledDataset data;
  MlpParams params;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    SyntheticSpec spec;
    spec.num_classes = 3;
    spec.dim = 20;
    spec.samples_per_class = 400;
    spec.seed = 11;
    Fixture out;
    out.data = normalize(make_synthetic(spec));
    const std::vector<std::size_t> widths{20, 32, 3};
    out.params = init_gaussian(widths, 1.0, 5);
    return out;
  }();
  return f;
}

void BM_HessianDiagSerial(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(serial::hessian_diag(f.params, f.data));
}
void BM_HessianDiagParallel(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(hessian_diag(f.params, f.data));
}
void BM_MarginsSerial(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(serial::margins(f.params, f.data));
}
void BM_MarginsParallel(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(margins(f.params, f.data));
}

const std::vector<double> kGrid{2, 3, 4, 6};

void BM_IsotropicQuadraticSerial(benchmark::State& state) {
  const auto h = random_wishart(16, 3);
  for (auto _ : state) benchmark::DoNotOptimize(serial::simulate_isotropic_quadratic(1.0, h, 20000, kGrid, 1));
}
void BM_IsotropicQuadraticParallel(benchmark::State& state) {
  const auto h = random_wishart(16, 3);
  for (auto _ : state) benchmark::DoNotOptimize(simulate_isotropic_quadratic(1.0, h, 20000, kGrid, 1));
}
void BM_MaskedQuadraticSerial(benchmark::State& state) {
  const std::vector<std::size_t> widths{2, 8, 2};
  const auto net = random_masked_network(widths, 1.0, 4);
  const auto h = random_wishart(net.center.num_params(), 9);
  for (auto _ : state) benchmark::DoNotOptimize(serial::simulate_masked_quadratic(net, h, 20000, kGrid, 1));
}
void BM_MaskedQuadraticParallel(benchmark::State& state) {
  const std::vector<std::size_t> widths{2, 8, 2};
  const auto net = random_masked_network(widths, 1.0, 4);
  const auto h = random_wishart(net.center.num_params(), 9);
  for (auto _ : state) benchmark::DoNotOptimize(simulate_masked_quadratic(net, h, 20000, kGrid, 1));
}

}  // namespace

BENCHMARK(BM_HessianDiagSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_HessianDiagParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MarginsSerial)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_MarginsParallel)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_IsotropicQuadraticSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_IsotropicQuadraticParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MaskedQuadraticSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MaskedQuadraticParallel)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
