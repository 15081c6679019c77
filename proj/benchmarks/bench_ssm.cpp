#include <benchmark/benchmark.h>

#include "streamdec/ssm.hpp"

using namespace streamdec;

static void BM_SsmStep(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  const int n = static_cast<int>(state.range(1));
  Rng rng(1);
  SsmLayerParams p;
  p.init(d, n, rng);
  SsmState st;
  st.reset(d, n);
  std::vector<double> x(static_cast<size_t>(d), 0.3), y(static_cast<size_t>(d));
  for (auto _ : state) {
    ssm_step(st, x, p, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_SsmStep)->Args({128, 8})->Args({128, 16})->Args({256, 8});

static void BM_SsmScanTrain(benchmark::State& state) {
  const int64_t t_len = state.range(0);
  Rng rng(2);
  SsmLayerParams p;
  p.init(128, 8, rng);
  Tensor xs = Tensor::randn({t_len, 128}, 1.0, rng);
  for (auto _ : state) {
    Graph g(false);
    Var u = g.constant_ref(xs);
    SsmLayerVars pv = ssm_leaf_vars(g, p);
    Var y = ssm_scan_train(g, u, pv);
    std::vector<int> tg(static_cast<size_t>(t_len), 1);
    std::vector<double> w(static_cast<size_t>(t_len), 1.0 / static_cast<double>(t_len));
    g.backward(g.softmax_xent_rows(y, std::move(tg), std::move(w)));
    benchmark::DoNotOptimize(p.a_log.grad.data.data());
  }
  state.SetItemsProcessed(state.iterations() * t_len);
}
BENCHMARK(BM_SsmScanTrain)->Arg(64)->Arg(128);
