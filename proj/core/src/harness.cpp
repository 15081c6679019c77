#include "streamdec/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "streamdec/util.hpp"

namespace streamdec {

using nlohmann::json;

namespace {

struct RecordOutcome {
  RecordDecode rd;
  size_t sample_index = 0;
};

RecordOutcome decode_with_sampling(const Model& model, const Corpus& corpus,
                                   const DatasetRecord& rec, const DecodeRunConfig& cfg,
                                   size_t record_index) {
  RecordOutcome out;
  if (cfg.n_samples <= 1) {
    DecodeParams p = cfg.params;
    p.seed = derive_seed(cfg.params.seed, 0xD0, record_index);
    out.rd = decode_record(model, corpus, rec, p, cfg.mode);
    return out;
  }
  std::vector<RecordDecode> decodes;
  std::vector<GenCandidate> candidates;
  for (int s = 0; s < cfg.n_samples; ++s) {
    DecodeParams p = cfg.params;
    p.seed = derive_seed(cfg.params.seed, 0xD0 + static_cast<uint64_t>(s), record_index);
    decodes.push_back(decode_record(model, corpus, rec, p, cfg.mode));
    GenCandidate c;
    c.graphemes = decodes.back().result.frames.graphemes;
    c.grapheme_logprob = decodes.back().result.grapheme_logprob;
    candidates.push_back(std::move(c));
  }
  const std::vector<int> ref =
      corpus.vocab.expand(rec.words, corpus.codec.alphabet, corpus.vocab.eos_word_id());
  const size_t chosen = n_time_select(candidates, cfg.criterion, ref,
                                      corpus.codec.alphabet.blank_id());
  out.rd = std::move(decodes[chosen]);
  out.sample_index = chosen;
  return out;
}

}  // namespace

CorpusEvalResult run_decode(const Model& model, const Corpus& corpus,
                            const DecodeRunConfig& cfg, std::ostream* per_record_jsonl,
                            std::ostream* attention_jsonl) {
  if (cfg.n_samples > 1 && cfg.mode != DecodeMode::kOffline) {
    throw std::invalid_argument("run_decode: N-time sampling requires offline mode");
  }
  const size_t n = cfg.max_records > 0
                       ? std::min<size_t>(corpus.eval.size(), static_cast<size_t>(cfg.max_records))
                       : corpus.eval.size();
  if (n == 0) throw std::invalid_argument("run_decode: empty eval split");

  CorpusEvalResult agg;
  int64_t char_edits = 0, ref_chars = 0, word_edits = 0, ref_words = 0;
  double lag_sum = 0.0, flat_sum = 0.0, p50_sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    RecordOutcome oc = decode_with_sampling(model, corpus, corpus.eval[i], cfg, i);
    const RecordDecode& rd = oc.rd;
    char_edits += rd.char_edits;
    ref_chars += rd.ref_chars;
    word_edits += rd.word_edits;
    ref_words += rd.ref_words;
    if (rd.result.hit_cap) ++agg.eos_missed;
    const SyncReport sync = sync_stats(rd.log);
    lag_sum += sync.mean_abs_lag;
    flat_sum += sync.flatness_ratio;
    p50_sum += sync.latency_p50 * 1000.0;
    agg.max_abs_lag = std::max(agg.max_abs_lag, static_cast<double>(sync.max_abs_lag));
    if (per_record_jsonl != nullptr) {
      json row;
      row["record"] = i;
      row["cer"] = rd.ref_chars > 0
                       ? static_cast<double>(rd.char_edits) / static_cast<double>(rd.ref_chars)
                       : 0.0;
      row["wer"] = rd.ref_words > 0
                       ? static_cast<double>(rd.word_edits) / static_cast<double>(rd.ref_words)
                       : 0.0;
      row["steps"] = rd.result.steps;
      row["eos"] = rd.result.eos_emitted;
      row["hyp"] = corpus.codec.alphabet.to_string(rd.oracle_hyp);
      row["ref"] = corpus.codec.alphabet.to_string(rd.ref);
      row["grapheme_logprob"] = rd.result.grapheme_logprob;
      row["sample"] = oc.sample_index;
      row["max_abs_lag"] = sync.max_abs_lag;
      (*per_record_jsonl) << row.dump() << "\n";
    }
    if (attention_jsonl != nullptr && !rd.result.attention_dump.empty()) {
      for (size_t t = 0; t < rd.result.attention_dump.size(); ++t) {
        json row;
        row["record"] = i;
        row["step"] = t;
        row["tok_begin"] = rd.result.window_spans[t].first;
        row["tok_end"] = rd.result.window_spans[t].second;
        row["weights"] = rd.result.attention_dump[t];
        (*attention_jsonl) << row.dump() << "\n";
      }
    }
  }
  agg.records = static_cast<int64_t>(n);
  agg.cer = static_cast<double>(char_edits) / static_cast<double>(std::max<int64_t>(1, ref_chars));
  agg.wer = static_cast<double>(word_edits) / static_cast<double>(std::max<int64_t>(1, ref_words));
  agg.mean_abs_lag = lag_sum / static_cast<double>(n);
  agg.mean_flatness = flat_sum / static_cast<double>(n);
  agg.p50_step_ms = p50_sum / static_cast<double>(n);
  return agg;
}

DatasetRecord rechunk_record(const DatasetRecord& rec, const Corpus& corpus, int l_min,
                             int l_max, uint64_t seed) {
  DatasetRecord out = rec;
  Rng rng(mix64(seed));
  out.chunks = make_chunks(out.words, out.word_times, l_min, l_max,
                           corpus.vocab.eos_word_id(), rng);
  return out;
}

std::vector<AblateRow> run_ablate(const Model& model, const Corpus& corpus,
                                  std::span<const AblateCell> cells,
                                  const DecodeRunConfig& base) {
  if (cells.empty()) throw std::invalid_argument("run_ablate: empty grid");
  std::vector<AblateRow> rows;
  for (size_t ci = 0; ci < cells.size(); ++ci) {
    const AblateCell& cell = cells[ci];
    DecodeRunConfig cfg = base;
    cfg.params.n_p = cell.n_p;
    cfg.params.n_f = cell.n_f;
    cfg.params.lambda = cell.lambda;
    cfg.params.top_k = cell.k;

    Corpus view;
    view.config = corpus.config;
    view.codec = corpus.codec;
    view.vocab = corpus.vocab;
    const bool rechunk = cell.l_min != corpus.config.l_min || cell.l_max != corpus.config.l_max;
    const size_t n = cfg.max_records > 0
                         ? std::min<size_t>(corpus.eval.size(),
                                            static_cast<size_t>(cfg.max_records))
                         : corpus.eval.size();
    for (size_t i = 0; i < n; ++i) {
      view.eval.push_back(rechunk
                              ? rechunk_record(corpus.eval[i], corpus, cell.l_min, cell.l_max,
                                               derive_seed(base.params.seed, 0xAB1A7E, i))
                              : corpus.eval[i]);
    }
    AblateRow row;
    row.cell = cell;
    row.res = run_decode(model, view, cfg);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablate_table(std::span<const AblateRow> rows) {
  std::ostringstream os;
  os << "l_min\tl_max\tn_p\tn_f\tlambda\tk\tcer\twer\teos_missed\tmax_lag\tp50_ms\tflatness\n";
  for (const AblateRow& r : rows) {
    os << r.cell.l_min << "\t" << r.cell.l_max << "\t";
    if (r.cell.n_p == kUnbounded) {
      os << "inf";
    } else {
      os << r.cell.n_p;
    }
    os << "\t" << r.cell.n_f << "\t" << r.cell.lambda << "\t" << r.cell.k << "\t";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f\t%.4f", r.res.cer, r.res.wer);
    os << buf << "\t" << r.res.eos_missed << "\t" << r.res.max_abs_lag;
    std::snprintf(buf, sizeof(buf), "\t%.3f\t%.2f", r.res.p50_step_ms, r.res.mean_flatness);
    os << buf << "\n";
  }
  return os.str();
}

int run_stream_io(const Model& model, const Corpus& corpus, const DecodeParams& params,
                  const FrameSeq& default_enrollment, std::istream& in, std::ostream& out,
                  bool pace) {
  StreamSession session(model, corpus.codec.alphabet, corpus.vocab, params);
  session.on_frame = [&](const FrameEvent& ev) {
    json row;
    row["step"] = ev.step;
    row["grapheme"] = ev.grapheme;
    row["codes"] = ev.codes;
    row["chunk_index"] = ev.chunk_index;
    out << row.dump() << "\n";
    out.flush();
  };

  bool begun = false;
  int arrival = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json ev = json::parse(line);
    if (ev.contains("enrollment")) {
      if (begun) throw std::runtime_error("stream: enrollment after first chunk");
      FrameSeq enr;
      enr.n_codebooks = corpus.config.n_codebooks;
      for (const auto& f : ev.at("enrollment")) {
        enr.graphemes.push_back(f.at(0).get<int>());
        for (int q = 0; q < enr.n_codebooks; ++q) {
          enr.codes.push_back(f.at(1 + q).get<int>());
        }
      }
      session.begin(enr);
      begun = true;
      continue;
    }
    if (!ev.contains("chunk")) continue;
    if (!begun) {
      session.begin(default_enrollment);
      begun = true;
    }
    TextChunk chunk;
    chunk.tokens = ev.at("chunk").get<std::vector<int>>();
    chunk.interval = ev.at("t").get<int>();
    arrival += chunk.interval;
    chunk.arrival = arrival;
    const bool final_chunk =
        std::find(chunk.tokens.begin(), chunk.tokens.end(), corpus.vocab.eos_word_id()) !=
        chunk.tokens.end();
    if (pace && chunk.interval > 0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(
          static_cast<double>(chunk.interval) / corpus.config.frame_rate));
    }
    session.push_chunk(chunk, final_chunk);
    session.decode_available();
    if (final_chunk) break;
  }
  if (!begun) return 1;
  if (!session.closed()) {
    throw std::runtime_error("stream: input ended without an EOS chunk");
  }
  session.finish();
  json done;
  done["done"] = true;
  done["eos"] = session.result().eos_emitted;
  done["steps"] = session.result().steps;
  out << done.dump() << "\n";
  return 0;
}

}  // namespace streamdec
