#include <doctest.h>

#include <sstream>

#include "streamdec/harness.hpp"
#include "streamdec/util.hpp"

using namespace streamdec;

namespace {

CorpusConfig small_cfg() {
  CorpusConfig cfg;
  cfg.n_train = 4;
  cfg.n_eval = 4;
  cfg.vocab_words = 12;
  cfg.words_min = 2;
  cfg.words_max = 3;
  cfg.n_letters = 6;
  cfg.n_train_speakers = 2;
  cfg.n_eval_speakers = 2;
  cfg.seed = 5;
  return cfg;
}

ModelConfig small_model(const Corpus& c) {
  ModelConfig mc;
  mc.d = 48;
  mc.shared_layers = 1;
  mc.group_layers = 1;
  mc.groups = {3, 2};
  mc.heads = 2;
  mc.dk = 16;
  mc.n_state = 4;
  mc.n_graphemes = c.codec.alphabet.n_ids();
  mc.n_codebooks = c.config.n_codebooks;
  mc.codebook_size = c.config.codebook_size;
  mc.word_vocab = c.vocab.n_tokens();
  mc.enr_slots = 8;
  mc.enr_layers = 1;
  return mc;
}

}  // namespace

TEST_CASE("one-batch overfit drives the loss down") {
  const Corpus c = gen_corpus(small_cfg());
  Model model(small_model(c), 3);
  TrainConfig tc;
  tc.steps = 500;
  tc.batch_size = 4;
  tc.optim.peak_lr = 3e-3;
  tc.optim.warmup_steps = 30;
  tc.eval_every = 0;
  tc.verbose = false;
  tc.seed = 2;
  const TrainResult r = train(model, c, tc);
  CHECK(r.steps_run == 500);
  CHECK(r.final_loss < 0.05);
}

TEST_CASE("run_decode aggregates and writes per-record rows") {
  const Corpus c = gen_corpus(small_cfg());
  Model model(small_model(c), 7);
  DecodeRunConfig cfg;
  cfg.mode = DecodeMode::kStream;
  cfg.params.greedy = true;
  std::ostringstream rows;
  const CorpusEvalResult res = run_decode(model, c, cfg, &rows);
  CHECK(res.records == 4);
  CHECK(res.cer >= 0.0);
  // untrained model: transcripts are garbage but bounded by the cap
  CHECK(res.cer < 3.0);
  int lines = 0;
  std::string line;
  std::istringstream is(rows.str());
  while (std::getline(is, line)) ++lines;
  CHECK(lines == 4);
}

TEST_CASE("n-time sampling selects the argmin grapheme-CER candidate") {
  const Corpus c = gen_corpus(small_cfg());
  Model model(small_model(c), 7);
  DecodeRunConfig bad;
  bad.mode = DecodeMode::kStream;
  bad.n_samples = 3;
  CHECK_THROWS(run_decode(model, c, bad));

  DecodeRunConfig five;
  five.mode = DecodeMode::kOffline;
  five.n_samples = 5;
  five.criterion = SelectionCriterion::kCer;
  five.params.lambda = 1.0;
  five.params.seed = 31;
  five.max_records = 1;
  std::ostringstream rows;
  run_decode(model, c, five, &rows);
  // recover the chosen sample index and cross-check against manually
  // decoded candidates (same seed derivation as the harness)
  const std::string row = rows.str();
  const auto pos = row.find("\"sample\":");
  REQUIRE(pos != std::string::npos);
  const int chosen = std::stoi(row.substr(pos + 9));

  const auto& rec = c.eval[0];
  const std::vector<int> ref = c.vocab.expand(rec.words, c.codec.alphabet, c.vocab.eos_word_id());
  std::vector<GenCandidate> cands;
  for (int s = 0; s < 5; ++s) {
    DecodeParams p = five.params;
    p.seed = derive_seed(five.params.seed, 0xD0 + static_cast<uint64_t>(s), 0);
    const auto rd = decode_record(model, c, rec, p, DecodeMode::kOffline);
    GenCandidate cand;
    cand.graphemes = rd.result.frames.graphemes;
    cand.grapheme_logprob = rd.result.grapheme_logprob;
    cands.push_back(std::move(cand));
  }
  const size_t want = n_time_select(cands, SelectionCriterion::kCer, ref,
                                    c.codec.alphabet.blank_id());
  CHECK(static_cast<size_t>(chosen) == want);
}

TEST_CASE("ablate grid produces one row per cell") {
  const Corpus c = gen_corpus(small_cfg());
  Model model(small_model(c), 9);
  std::vector<AblateCell> cells;
  for (auto [np, nf] : {std::pair{1, 0}, std::pair{2, 2}, std::pair{4, 4}}) {
    AblateCell cell;
    cell.n_p = np;
    cell.n_f = nf;
    cells.push_back(cell);
  }
  DecodeRunConfig base;
  base.params.greedy = true;
  base.max_records = 2;
  const auto rows = run_ablate(model, c, cells, base);
  REQUIRE(rows.size() == 3);
  const std::string table = ablate_table(rows);
  CHECK(table.find("cer") != std::string::npos);
  CHECK(std::count(table.begin(), table.end(), '\n') == 4);  // header + 3 rows

  CHECK_THROWS(run_ablate(model, c, {}, base));
}

TEST_CASE("rechunk_record is deterministic and preserves words") {
  const Corpus c = gen_corpus(small_cfg());
  const auto a = rechunk_record(c.eval[0], c, 1, 2, 77);
  const auto b = rechunk_record(c.eval[0], c, 1, 2, 77);
  REQUIRE(a.chunks.size() == b.chunks.size());
  for (size_t i = 0; i < a.chunks.size(); ++i) CHECK(a.chunks[i].tokens == b.chunks[i].tokens);
  std::vector<int> words;
  for (const auto& ch : a.chunks) {
    for (int t : ch.tokens) {
      if (t != c.vocab.eos_word_id()) words.push_back(t);
    }
  }
  CHECK(words == c.eval[0].words);
  CHECK(a.chunks.back().arrival == c.eval[0].chunks.back().arrival);
}

TEST_CASE("stream io round trip over ndjson") {
  const Corpus c = gen_corpus(small_cfg());
  Model model(small_model(c), 11);
  const DatasetRecord& rec = c.eval[1];

  std::ostringstream events;
  int prev = 0;
  for (const TextChunk& ch : rec.chunks) {
    events << "{\"chunk\": [";
    for (size_t j = 0; j < ch.tokens.size(); ++j) events << (j ? "," : "") << ch.tokens[j];
    events << "], \"t\": " << (ch.arrival - prev) << "}\n";
    prev = ch.arrival;
  }

  DecodeParams p;
  p.greedy = true;
  std::istringstream in(events.str());
  std::ostringstream out;
  const int rc = run_stream_io(model, c, p, rec.enrollment, in, out, false);
  CHECK(rc == 0);
  // one frame event per emitted frame plus the final summary line
  int lines = 0;
  bool saw_done = false;
  std::string line;
  std::istringstream os(out.str());
  while (std::getline(os, line)) {
    ++lines;
    if (line.find("\"done\"") != std::string::npos) saw_done = true;
    if (lines == 1) {
      CHECK(line.find("\"step\"") != std::string::npos);
      CHECK(line.find("\"grapheme\"") != std::string::npos);
      CHECK(line.find("\"codes\"") != std::string::npos);
      CHECK(line.find("\"chunk_index\"") != std::string::npos);
    }
  }
  CHECK(saw_done);
  CHECK(lines >= 2);

  // equivalence with the in-process session on the same inputs
  const auto rd = decode_record(model, c, rec, p, DecodeMode::kStream);
  CHECK(lines == static_cast<int>(rd.result.frames.size()) + 1);
}

TEST_CASE("stream mode never decodes ahead of the lookahead contract") {
  const Corpus c = gen_corpus(small_cfg());
  Model model(small_model(c), 13);
  DecodeParams p;
  p.greedy = true;
  p.n_p = 2;
  p.n_f = 1;
  StreamSession session(model, c.codec.alphabet, c.vocab, p);
  const DatasetRecord& rec = c.eval[0];
  session.begin(rec.enrollment);
  for (size_t i = 0; i < rec.chunks.size(); ++i) {
    session.push_chunk(rec.chunks[i], i + 1 == rec.chunks.size());
    session.decode_available();
    if (i + 1 < rec.chunks.size()) {
      // steps generated so far must have their window future available:
      // c(t) + n_f <= arrived for every decoded t
      const auto& fc = session.result().frame_chunk;
      for (int chunk_at_t : fc) {
        CHECK(chunk_at_t + p.n_f <= static_cast<int>(i + 1));
      }
    }
  }
  session.finish();
  CHECK(session.result().frames.size() > 0);
}
