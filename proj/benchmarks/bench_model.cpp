#include <benchmark/benchmark.h>

#include "streamdec/model.hpp"
#include "streamdec/synth.hpp"
#include "streamdec/train.hpp"

using namespace streamdec;

namespace {
const Corpus& bench_corpus() {
  static const Corpus c = [] {
    CorpusConfig cfg;
    cfg.n_train = 16;
    cfg.n_eval = 4;
    cfg.seed = 404;
    return gen_corpus(cfg);
  }();
  return c;
}

Model bench_model_instance() {
  const Corpus& c = bench_corpus();
  ModelConfig mc;
  mc.n_graphemes = c.codec.alphabet.n_ids();
  mc.n_codebooks = c.config.n_codebooks;
  mc.codebook_size = c.config.codebook_size;
  mc.word_vocab = c.vocab.n_tokens();
  return Model(mc, 99);
}
}  // namespace

static void BM_DecodeStep(benchmark::State& state) {
  const Corpus& c = bench_corpus();
  const Model model = bench_model_instance();
  const DatasetRecord& rec = c.train[0];
  Model::MemoryCaches mem;
  model.init_memory(mem, rec.enrollment);
  model.append_tokens(mem, assign_positions(rec.chunks));
  Model::StepStates st;
  st.reset(model.config());
  Model::StepOutput out;
  out.reset(model.config());
  std::vector<int> codes(static_cast<size_t>(model.config().n_codebooks),
                         model.config().code_bos());
  int64_t t = 0;
  for (auto _ : state) {
    model.forward_step(st, mem, model.config().grapheme_bos(), codes, t++, 0,
                       mem.n_tokens(), out);
    benchmark::DoNotOptimize(out.logits[0].data());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_DecodeStep);

static void BM_TrainRecord(benchmark::State& state) {
  const Corpus& c = bench_corpus();
  Model model = bench_model_instance();
  const std::vector<double> w(static_cast<size_t>(model.config().n_outputs()), 1.0);
  Rng rng(1);
  auto refs = model.named_params();
  for (auto _ : state) {
    for (auto& r : refs) r.grad->zero();
    Graph g(false);
    auto rl = model.build_record_loss(g, c.train[0], w, MaskSettings{}, c.codec.alphabet, rng);
    g.backward(rl.loss);
    benchmark::DoNotOptimize(refs[0].grad->data.data());
  }
  state.SetItemsProcessed(state.iterations() * c.train[0].target.size());
}
BENCHMARK(BM_TrainRecord);

static void BM_EncodeEnrollment(benchmark::State& state) {
  const Corpus& c = bench_corpus();
  const Model model = bench_model_instance();
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.encode_enrollment(c.train[0].enrollment));
  }
}
BENCHMARK(BM_EncodeEnrollment);
