#include "streamdec/session.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "streamdec/util.hpp"

namespace streamdec {

using Clock = std::chrono::steady_clock;

StreamSession::StreamSession(const Model& model, const GraphemeAlphabet& alphabet,
                             const WordVocab& vocab, DecodeParams params)
    : model_(model),
      alphabet_(alphabet),
      vocab_(vocab),
      params_(params),
      tracker_(alphabet.blank_id(), alphabet.eos_id()),
      rng_(mix64(params.seed)) {
  prev_codes_.assign(static_cast<size_t>(model.config().n_codebooks), 0);
}

void StreamSession::begin(const FrameSeq& enrollment) {
  model_.init_memory(mem_, enrollment);
  states_.reset(model_.config());
  step_out_.reset(model_.config());
  tracker_.reset();
  rng_.seed(mix64(params_.seed));
  chunks_.clear();
  tok_offset_.assign(1, 0);
  closed_ = false;
  stopped_ = false;
  t_ = 0;
  current_chunk_ = 1;
  total_duration_ = 0;
  guide_window_ = {0, 0};
  prev_grapheme_ = model_.config().grapheme_bos();
  prev_phase_ = 0;
  std::fill(prev_codes_.begin(), prev_codes_.end(), model_.config().code_bos());
  result_ = DecodeResult{};
  result_.frames.n_codebooks = model_.config().n_codebooks;
}

void StreamSession::push_chunk(const TextChunk& chunk, bool final_chunk) {
  if (closed_) throw std::runtime_error("push_chunk: stream already closed");
  if (!chunks_.empty() && chunk.arrival < chunks_.back().arrival) {
    throw std::runtime_error("push_chunk: arrivals must be nondecreasing");
  }
  chunks_.push_back(chunk);
  tok_offset_.push_back(tok_offset_.back() + static_cast<int64_t>(chunk.tokens.size()));
  std::vector<PositionedToken> pts;
  for (size_t j = 0; j < chunk.tokens.size(); ++j) {
    pts.push_back({chunk.tokens[j], static_cast<int64_t>(chunk.arrival) + static_cast<int64_t>(j)});
  }
  model_.append_tokens(mem_, pts);
  if (final_chunk) {
    closed_ = true;
    total_duration_ = chunk.arrival;
  }
}

bool StreamSession::can_decode_next() const {
  if (stopped_ || chunks_.empty()) return false;
  const int arrived = arrived_chunks();
  if (closed_) {
    const int64_t cap =
        total_duration_ +
        std::max<int64_t>(1, static_cast<int64_t>(std::ceil(
                                 static_cast<double>(total_duration_) * params_.cap_margin)));
    return t_ <= cap;
  }
  if (params_.n_f == kUnbounded) return false;  // whole stream required
  if (t_ >= chunks_.back().arrival) return false;
  // c(t) over arrived chunks (cheap scan forward from the cached pointer)
  int c = current_chunk_;
  while (c < arrived && chunks_[static_cast<size_t>(c)].arrival <= t_) ++c;
  return c + params_.n_f <= arrived;
}

std::vector<int> StreamSession::chunk_graphemes(int index_1based) const {
  const TextChunk& ch = chunks_[static_cast<size_t>(index_1based - 1)];
  const bool is_final = closed_ && index_1based == arrived_chunks();
  const int eos_word = vocab_.eos_word_id();
  std::vector<int> out;
  int last_word_pos = -1;
  for (size_t j = 0; j < ch.tokens.size(); ++j) {
    if (ch.tokens[j] != eos_word) last_word_pos = static_cast<int>(j);
  }
  for (size_t j = 0; j < ch.tokens.size(); ++j) {
    const int w = ch.tokens[j];
    if (w == eos_word) continue;
    const auto& sp = vocab_.spellings[static_cast<size_t>(w)];
    out.insert(out.end(), sp.begin(), sp.end());
    const bool record_last = is_final && static_cast<int>(j) == last_word_pos;
    if (!record_last) out.push_back(alphabet_.separator_id());
  }
  return out;
}

void StreamSession::sync_guidance_window(const WindowRange& w) {
  const bool ends = closed_ && w.last == arrived_chunks();
  if (guide_window_.last == 0) {
    std::vector<int> txt;
    for (int i = w.first; i <= w.last; ++i) {
      const auto g = chunk_graphemes(i);
      txt.insert(txt.end(), g.begin(), g.end());
    }
    tracker_.set_transcript(std::move(txt), ends);
    guide_window_ = w;
    return;
  }
  if (w.first > guide_window_.first) {
    int64_t drop = 0;
    for (int i = guide_window_.first; i < w.first; ++i) {
      drop += static_cast<int64_t>(chunk_graphemes(i).size());
    }
    tracker_.drop_transcript_prefix(drop);
    guide_window_.first = w.first;
  }
  if (w.last > guide_window_.last) {
    std::vector<int> txt;
    for (int i = guide_window_.last + 1; i <= w.last; ++i) {
      const auto g = chunk_graphemes(i);
      txt.insert(txt.end(), g.begin(), g.end());
    }
    tracker_.append_transcript(txt, ends);
    guide_window_.last = w.last;
  }
  tracker_.set_ends_stream(ends);
}

void StreamSession::decode_one() {
  const auto t0 = Clock::now();
  const int arrived = arrived_chunks();
  while (current_chunk_ < arrived &&
         chunks_[static_cast<size_t>(current_chunk_)].arrival <= t_) {
    ++current_chunk_;
  }
  const WindowRange w = window_at(current_chunk_, arrived, params_.n_p, params_.n_f);
  if (!params_.greedy) sync_guidance_window(w);
  const int64_t tok_begin = tok_offset_[static_cast<size_t>(w.first - 1)];
  const int64_t tok_end = tok_offset_[static_cast<size_t>(w.last)];

  std::vector<double>* dump = nullptr;
  if (params_.dump_attention) {
    result_.attention_dump.emplace_back();
    result_.window_spans.emplace_back(tok_begin, tok_end);
    dump = &result_.attention_dump.back();
  }
  model_.forward_step(states_, mem_, prev_grapheme_, prev_codes_, prev_phase_, t_,
                      tok_begin, tok_end, step_out_, dump);

  const std::vector<double> p = softmax(step_out_.logits[0]);
  int chosen;
  if (params_.greedy) {
    chosen = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
  } else {
    const GuidingSet guiding = tracker_.current_guiding();
    chosen = guided_sample(p, guiding, params_.lambda, params_.top_k, rng_);
    if (params_.trace_guidance) {
      result_.guidance_trace.push_back({t_, guiding.s_cer, guiding.tokens, chosen});
    }
  }
  result_.grapheme_logprob += std::log(std::max(p[static_cast<size_t>(chosen)], 1e-300));

  const bool at_stream_end = closed_ && w.last == arrived;
  if (chosen == alphabet_.eos_id() && at_stream_end) {
    result_.eos_emitted = true;
    stopped_ = true;
    result_.step_seconds.push_back(
        std::chrono::duration<double>(Clock::now() - t0).count());
    ++result_.steps;
    return;
  }

  std::vector<int> codes(static_cast<size_t>(model_.config().n_codebooks));
  for (int q = 0; q < model_.config().n_codebooks; ++q) {
    const auto& lg = step_out_.logits[static_cast<size_t>(q + 1)];
    codes[static_cast<size_t>(q)] =
        static_cast<int>(std::max_element(lg.begin(), lg.end()) - lg.begin());
  }
  result_.frames.push(chosen, codes);
  result_.frame_chunk.push_back(current_chunk_);
  tracker_.push_decoded(chosen);
  prev_phase_ = chosen == prev_grapheme_ && t_ > 0
                    ? std::min(prev_phase_ + 1, model_.config().phase_cap - 1)
                    : 0;
  prev_grapheme_ = chosen;
  prev_codes_ = codes;
  ++t_;
  ++result_.steps;
  result_.step_seconds.push_back(std::chrono::duration<double>(Clock::now() - t0).count());

  if (on_frame) {
    FrameEvent ev;
    ev.step = t_ - 1;
    ev.grapheme = chosen;
    ev.codes = codes;
    ev.chunk_index = current_chunk_;
    on_frame(ev);
  }
}

void StreamSession::decode_available() {
  while (can_decode_next()) decode_one();
}

void StreamSession::finish() {
  if (!closed_) throw std::runtime_error("finish: final chunk not pushed");
  while (can_decode_next()) decode_one();
  if (!result_.eos_emitted) result_.hit_cap = true;
}

std::vector<std::vector<int>> split_words(std::span<const int> graphemes, int separator) {
  std::vector<std::vector<int>> words;
  std::vector<int> cur;
  for (int g : graphemes) {
    if (g == separator) {
      words.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(g);
    }
  }
  words.push_back(cur);
  return words;
}

RecordDecode decode_record(const Model& model, const Corpus& corpus,
                           const DatasetRecord& rec, const DecodeParams& params,
                           DecodeMode mode) {
  DecodeParams p = params;
  if (mode == DecodeMode::kOffline) p.n_p = kUnbounded;
  StreamSession session(model, corpus.codec.alphabet, corpus.vocab, p);
  session.begin(rec.enrollment);
  for (size_t i = 0; i < rec.chunks.size(); ++i) {
    const bool final_chunk = i + 1 == rec.chunks.size();
    session.push_chunk(rec.chunks[i], final_chunk);
    if (mode == DecodeMode::kStream) session.decode_available();
  }
  session.finish();

  RecordDecode rd;
  rd.result = session.take_result();
  const SpeakerSpec spk = gen_speaker(corpus.codec, rec.speaker_seed);
  rd.oracle_hyp = transcribe_oracle(rd.result.frames, spk, corpus.codec);
  rd.ref = corpus.vocab.expand(rec.words, corpus.codec.alphabet, corpus.vocab.eos_word_id());
  rd.char_edits = edit_distance(std::span<const int>(rd.oracle_hyp), std::span<const int>(rd.ref));
  rd.ref_chars = static_cast<int64_t>(rd.ref.size());
  const auto hyp_words = split_words(rd.oracle_hyp, corpus.codec.alphabet.separator_id());
  const auto ref_words = split_words(rd.ref, corpus.codec.alphabet.separator_id());
  rd.word_edits = edit_distance<std::vector<int>>(hyp_words, ref_words);
  rd.ref_words = static_cast<int64_t>(ref_words.size());

  rd.log.chunk_intervals.clear();
  for (const TextChunk& c : rec.chunks) rd.log.chunk_intervals.push_back(c.interval);
  rd.log.frame_chunk = rd.result.frame_chunk;
  // one latency sample per emitted frame (the EOS step keeps its sample in
  // result.step_seconds only)
  rd.log.step_seconds.assign(rd.result.step_seconds.begin(),
                             rd.result.step_seconds.begin() +
                                 static_cast<ptrdiff_t>(rd.result.frame_chunk.size()));
  return rd;
}

}  // namespace streamdec
