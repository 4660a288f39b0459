// Serial reference kernels versus the OpenMP versions at training-loop sizes.

#include "cirrl/kernels.hpp"
#include "cirrl/rng.hpp"

#include <benchmark/benchmark.h>

namespace {

using cirrl::DenseMatrix;

template <void (*Gemm)(const DenseMatrix&, const DenseMatrix&, DenseMatrix&, bool)>
void bm_gemm_nn(benchmark::State& state) {
  const auto n = state.range(0), w = state.range(1);
  cirrl::Rng rng(1);
  const DenseMatrix a = rng.normal_matrix(n, w), b = rng.normal_matrix(w, w);
  DenseMatrix c(n, w);
  for (auto _ : state) {
    Gemm(a, b, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * w * w);
}

template <void (*Gemm)(const DenseMatrix&, const DenseMatrix&, DenseMatrix&, bool)>
void bm_gemm_tn(benchmark::State& state) {
  const auto n = state.range(0), w = state.range(1);
  cirrl::Rng rng(2);
  const DenseMatrix a = rng.normal_matrix(n, w), b = rng.normal_matrix(n, w);
  DenseMatrix c(w, w);
  for (auto _ : state) {
    Gemm(a, b, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * w * w);
}

template <cirrl::kernels::EnergyScore (*Score)(const DenseMatrix&, const DenseMatrix&, int)>
void bm_energy(benchmark::State& state) {
  const auto n = state.range(0), p = state.range(1);
  const int m = 2;
  cirrl::Rng rng(3);
  const DenseMatrix t = rng.normal_matrix(n, p), s = rng.normal_matrix(n * m, p);
  for (auto _ : state) benchmark::DoNotOptimize(Score(t, s, m).value);
}

}  // namespace

BENCHMARK(bm_gemm_nn<cirrl::kernels::serial::gemm_nn>)->Name("gemm_nn/serial")->Args({512, 128})->Args({512, 400});
BENCHMARK(bm_gemm_nn<cirrl::kernels::gemm_nn>)->Name("gemm_nn/omp")->Args({512, 128})->Args({512, 400});
BENCHMARK(bm_gemm_tn<cirrl::kernels::serial::gemm_tn>)->Name("gemm_tn/serial")->Args({512, 128})->Args({512, 400});
BENCHMARK(bm_gemm_tn<cirrl::kernels::gemm_tn>)->Name("gemm_tn/omp")->Args({512, 128})->Args({512, 400});
BENCHMARK(bm_energy<cirrl::kernels::serial::energy_score>)->Name("energy/serial")->Args({256, 10})->Args({512, 10});
BENCHMARK(bm_energy<cirrl::kernels::energy_score>)->Name("energy/omp")->Args({256, 10})->Args({512, 10});

BENCHMARK_MAIN();
