// Serial reference vs OpenMP kernels. Sizes follow the 64x64 demo network.
#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "cds/kernels.hpp"
#include "cds/rng.hpp"

using namespace cds;

namespace {

Tensor3 random_tensor(const Shape& s, std::uint64_t seed) {
  Rng r(seed);
  return r.normal_like(s);
}

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  const Tensor3 t = random_tensor({1, 1, static_cast<int>(n)}, seed);
  return {t.values().begin(), t.values().end()};
}

template <bool Omp>
void bm_conv3x3(benchmark::State& st) {
  const int side = static_cast<int>(st.range(0));
  const Tensor3 in = random_tensor({8, side, side}, 1);
  const auto w = random_vec(8 * 8 * 9, 2);
  const std::vector<double> b(8, 0.1);
  for (auto _ : st) {
    if constexpr (Omp) benchmark::DoNotOptimize(kernels::omp::conv3x3_forward(in, w, b, 8, 1));
    else benchmark::DoNotOptimize(kernels::serial::conv3x3_forward(in, w, b, 8, 1));
  }
}

template <bool Omp>
void bm_attention(benchmark::State& st) {
  const int side = static_cast<int>(st.range(0));
  const Tensor3 q = random_tensor({8, side, side}, 3);
  const Tensor3 k = random_tensor({8, side, side}, 4);
  const Tensor3 v = random_tensor({8, side, side}, 5);
  const double scale = 1.0 / std::sqrt(8.0);
  for (auto _ : st) {
    if constexpr (Omp) {
      const auto p = kernels::omp::attention_probs(q, k, scale);
      benchmark::DoNotOptimize(kernels::omp::attention_apply(p, v));
    } else {
      const auto p = kernels::serial::attention_probs(q, k, scale);
      benchmark::DoNotOptimize(kernels::serial::attention_apply(p, v));
    }
  }
}

template <bool Omp>
void bm_gram(benchmark::State& st) {
  const int n = static_cast<int>(st.range(0));
  const auto a = random_vec(static_cast<std::size_t>(n) * 32, 6);
  const auto b = random_vec(static_cast<std::size_t>(n) * 32, 7);
  for (auto _ : st) {
    if constexpr (Omp) benchmark::DoNotOptimize(kernels::omp::gram(a, b, n, n, 32));
    else benchmark::DoNotOptimize(kernels::serial::gram(a, b, n, n, 32));
  }
}

}  // namespace

BENCHMARK(bm_conv3x3<false>)->Name("conv3x3/serial")->Arg(32)->Arg(64);
BENCHMARK(bm_conv3x3<true>)->Name("conv3x3/omp")->Arg(32)->Arg(64);
BENCHMARK(bm_attention<false>)->Name("attention/serial")->Arg(8)->Arg(16);
BENCHMARK(bm_attention<true>)->Name("attention/omp")->Arg(8)->Arg(16);
BENCHMARK(bm_gram<false>)->Name("gram/serial")->Arg(256)->Arg(1024);
BENCHMARK(bm_gram<true>)->Name("gram/omp")->Arg(256)->Arg(1024);

BENCHMARK_MAIN();
