#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "streamdec/guidance.hpp"
#include "streamdec/metrics.hpp"
#include "streamdec/model.hpp"
#include "streamdec/synth.hpp"
#include "streamdec/text_stream.hpp"

namespace streamdec {

struct DecodeParams {
  int n_p = 4;
  int n_f = 2;  // kUnbounded for "all"
  double lambda = 1.0;
  int top_k = 5;
  bool greedy = false;  // argmax grapheme, guidance ignored
  uint64_t seed = 0;
  double cap_margin = 0.25;  // hard stop at (1+margin) * total duration
  bool dump_attention = false;
  bool trace_guidance = false;
};

// one row of the guidance debug log
struct GuidanceTraceEntry {
  int64_t step = 0;
  double s_cer = 0.0;
  std::vector<int> guiding;
  int chosen = 0;
};

struct FrameEvent {
  int64_t step = 0;
  int grapheme = 0;
  std::vector<int> codes;
  int chunk_index = 0;  // c(t) at emission
};

struct DecodeResult {
  FrameSeq frames;
  std::vector<int> frame_chunk;      // c(t) per emitted frame
  std::vector<double> step_seconds;  // wall time per decode step
  double grapheme_logprob = 0.0;
  bool eos_emitted = false;
  bool hit_cap = false;
  int64_t steps = 0;
  // per step per block, head-major attention rows (only when dumping)
  std::vector<std::vector<double>> attention_dump;
  std::vector<std::pair<int64_t, int64_t>> window_spans;  // token spans per dumped step
  std::vector<GuidanceTraceEntry> guidance_trace;
};

// One generation session: chunks arrive in order, frames come out as the
// lookahead contract allows. Per-step work touches only the fixed-size
// window and states, so step cost does not grow with the stream.
class StreamSession {
 public:
  StreamSession(const Model& model, const GraphemeAlphabet& alphabet,
                const WordVocab& vocab, DecodeParams params);

  void begin(const FrameSeq& enrollment);
  // Arrival of the next chunk; final marks the EOS-carrying chunk.
  void push_chunk(const TextChunk& chunk, bool final_chunk);
  // Decodes every step the generation-delay contract currently allows.
  // Emitted frames are appended to result(); the callback (if set) sees
  // each frame as it is produced.
  void decode_available();
  // After the final chunk: run to EOS or the hard cap.
  void finish();

  const DecodeResult& result() const { return result_; }
  DecodeResult take_result() { return std::move(result_); }
  std::function<void(const FrameEvent&)> on_frame;

  int arrived_chunks() const { return static_cast<int>(chunks_.size()); }
  bool closed() const { return closed_; }

 private:
  bool can_decode_next() const;
  void decode_one();
  void sync_guidance_window(const WindowRange& w);
  std::vector<int> chunk_graphemes(int index_1based) const;

  const Model& model_;
  GraphemeAlphabet alphabet_;
  const WordVocab& vocab_;
  DecodeParams params_;

  std::vector<TextChunk> chunks_;
  std::vector<int64_t> tok_offset_{0};  // prefix token counts per chunk
  bool closed_ = false;
  int64_t total_duration_ = 0;

  Model::MemoryCaches mem_;
  Model::StepStates states_;
  Model::StepOutput step_out_;
  GuidanceTracker tracker_;
  Rng rng_;

  int64_t t_ = 0;
  int current_chunk_ = 1;
  int prev_grapheme_ = 0;
  int prev_phase_ = 0;
  std::vector<int> prev_codes_;
  WindowRange guide_window_{0, 0};  // chunks currently in the tracker
  bool stopped_ = false;

  DecodeResult result_;
};

// Convenience wrapper used by the harness and tests: replays a record's
// chunk events (offline mode preloads all of them) and scores the output
// with the oracle transcriber.
enum class DecodeMode { kOffline, kStream };

struct RecordDecode {
  DecodeResult result;
  std::vector<int> oracle_hyp;   // transcribed graphemes (with separators)
  std::vector<int> ref;          // reference transcript graphemes
  int64_t char_edits = 0;        // edit distance hyp vs ref
  int64_t word_edits = 0;
  int64_t ref_chars = 0;
  int64_t ref_words = 0;
  SessionLog log;
};

RecordDecode decode_record(const Model& model, const Corpus& corpus,
                           const DatasetRecord& rec, const DecodeParams& params,
                           DecodeMode mode);

// Splits a grapheme sequence into words at separators (for WER).
std::vector<std::vector<int>> split_words(std::span<const int> graphemes, int separator);

}  // namespace streamdec
