// Serial reference kernels against the OpenMP versions. Thread count for the
// parallel runs comes from TRACE_SEQ_THREADS (default: 4).
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "traceseq/numkit/kernels.hpp"

namespace k = traceseq::numkit::kernels;

namespace {

std::vector<double> random_values(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1, 1);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

template <bool Parallel>
void BM_MatmulNN(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = random_values(n * n, 1), b = random_values(n * n, 2);
  std::vector<double> c(n * n);
  k::set_threads(Parallel ? k::threads_from_env(4) : 1);
  for (auto _ : state) {
    std::fill(c.begin(), c.end(), 0.0);
    if constexpr (Parallel) {
      k::parallel::matmul_nn(a.data(), b.data(), c.data(), n, n, n);
    } else {
      k::serial::matmul_nn(a.data(), b.data(), c.data(), n, n, n);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <bool Parallel>
void BM_MatmulNT(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = random_values(n * n, 1), b = random_values(n * n, 2);
  std::vector<double> c(n * n);
  k::set_threads(Parallel ? k::threads_from_env(4) : 1);
  for (auto _ : state) {
    std::fill(c.begin(), c.end(), 0.0);
    if constexpr (Parallel) {
      k::parallel::matmul_nt(a.data(), b.data(), c.data(), n, n, n);
    } else {
      k::serial::matmul_nt(a.data(), b.data(), c.data(), n, n, n);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <bool Parallel>
void BM_SoftmaxRows(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto x = random_values(n * n, 3);
  std::vector<double> y(n * n);
  k::set_threads(Parallel ? k::threads_from_env(4) : 1);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::softmax_rows(x.data(), y.data(), n, n);
    } else {
      k::serial::softmax_rows(x.data(), y.data(), n, n);
    }
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(BM_MatmulNN<false>)->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(BM_MatmulNN<true>)->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(BM_MatmulNT<false>)->Arg(128);
BENCHMARK(BM_MatmulNT<true>)->Arg(128);
BENCHMARK(BM_SoftmaxRows<false>)->Arg(100)->Arg(512);
BENCHMARK(BM_SoftmaxRows<true>)->Arg(100)->Arg(512);

BENCHMARK_MAIN();
