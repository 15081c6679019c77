#include <benchmark/benchmark.h>

#include "streamdec/guidance.hpp"
#include "streamdec/metrics.hpp"
#include "streamdec/tensor.hpp"

using namespace streamdec;

static void BM_EditDistance(benchmark::State& state) {
  const size_t n = static_cast<size_t>(state.range(0));
  Rng rng(1);
  std::uniform_int_distribution<int> ch(0, 11);
  std::vector<int> a(n), b(n);
  for (auto& v : a) v = ch(rng);
  for (auto& v : b) v = ch(rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(edit_distance<int>(a, b));
  }
}
BENCHMARK(BM_EditDistance)->Arg(32)->Arg(128)->Arg(512);

static void BM_BestPrefixCer(benchmark::State& state) {
  Rng rng(3);
  std::uniform_int_distribution<int> ch(1, 11);
  std::vector<int> dec(static_cast<size_t>(state.range(0)));
  std::vector<int> tr(static_cast<size_t>(state.range(0)));
  for (auto& v : dec) v = ch(rng);
  for (auto& v : tr) v = ch(rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(best_prefix_cer(dec, tr, 12));
  }
}
BENCHMARK(BM_BestPrefixCer)->Arg(24)->Arg(60);
