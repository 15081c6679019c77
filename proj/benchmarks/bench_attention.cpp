#include <benchmark/benchmark.h>

#include "streamdec/attention.hpp"

using namespace streamdec;

static void BM_CrossAttentionStep(benchmark::State& state) {
  const int64_t n_txt = state.range(0);
  const int64_t dk = 64;
  const int heads = 4;
  RopeConfig rope(16);
  Rng rng(1);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> k_enr(64 * dk), v_enr(64 * dk);
  std::vector<double> k_txt(static_cast<size_t>(n_txt * dk)), v_txt(static_cast<size_t>(n_txt * dk));
  std::vector<int64_t> pos;
  for (int64_t j = 0; j < n_txt; ++j) pos.push_back(j * 3);
  for (auto& v : k_enr) v = d(rng);
  for (auto& v : v_enr) v = d(rng);
  for (auto& v : k_txt) v = d(rng);
  for (auto& v : v_txt) v = d(rng);
  std::vector<double> q(dk), out(dk);
  for (auto& v : q) v = d(rng);
  AttnMemory mem;
  mem.dk = dk;
  mem.k_enr = k_enr;
  mem.v_enr = v_enr;
  mem.n_enr = 64;
  mem.k_txt = k_txt;
  mem.v_txt = v_txt;
  mem.n_txt = n_txt;
  mem.pos_ids = pos;
  mem.keys_prerotated = true;
  AttnScratch scratch;
  int64_t t = 0;
  for (auto _ : state) {
    cross_attention(q, t++, mem, heads, rope, out, scratch);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_CrossAttentionStep)->Arg(15)->Arg(30)->Arg(75);
