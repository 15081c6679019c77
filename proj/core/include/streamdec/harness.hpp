#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "streamdec/session.hpp"
#include "streamdec/train.hpp"

namespace streamdec {

struct DecodeRunConfig {
  DecodeParams params;
  DecodeMode mode = DecodeMode::kStream;
  int n_samples = 1;  // >1 only in offline mode
  SelectionCriterion criterion = SelectionCriterion::kCer;
  int max_records = 0;  // 0 = whole eval split
};

struct CorpusEvalResult {
  double cer = 0.0;
  double wer = 0.0;
  int64_t records = 0;
  int64_t eos_missed = 0;
  double mean_abs_lag = 0.0;
  double max_abs_lag = 0.0;
  double p50_step_ms = 0.0;
  double mean_flatness = 0.0;
};

// Decodes (a prefix of) the eval split and aggregates corpus-level
// metrics. With n_samples > 1 each record is generated that many times
// (seeds derived per record and sample) and one output is selected by the
// criterion; sample 0 reproduces the n_samples == 1 run. Per-record rows
// are written as JSON lines when a stream is given.
CorpusEvalResult run_decode(const Model& model, const Corpus& corpus,
                            const DecodeRunConfig& cfg,
                            std::ostream* per_record_jsonl = nullptr,
                            std::ostream* attention_jsonl = nullptr);

struct AblateCell {
  int l_min = 2, l_max = 4;
  int n_p = 4, n_f = 2;
  double lambda = 1.0;
  int k = 5;
};

struct AblateRow {
  AblateCell cell;
  CorpusEvalResult res;
};

// One decode run per cell; records are re-chunked deterministically when a
// cell's chunk range differs from the corpus default.
std::vector<AblateRow> run_ablate(const Model& model, const Corpus& corpus,
                                  std::span<const AblateCell> cells,
                                  const DecodeRunConfig& base);
std::string ablate_table(std::span<const AblateRow> rows);

// ndjson chunk events in ({"chunk": [...], "t": n}), frame events out
// ({"step","grapheme","codes","chunk_index"}). The chunk carrying the EOS
// word token closes the stream. An optional leading {"enrollment": ...}
// event overrides the enrollment frames. With pace=true arrivals are
// replayed on the wall clock at the configured frame rate.
int run_stream_io(const Model& model, const Corpus& corpus, const DecodeParams& params,
                  const FrameSeq& default_enrollment, std::istream& in, std::ostream& out,
                  bool pace);

// Re-chunk a record's words with a different chunk-size range.
DatasetRecord rechunk_record(const DatasetRecord& rec, const Corpus& corpus, int l_min,
                             int l_max, uint64_t seed);

}  // namespace streamdec
