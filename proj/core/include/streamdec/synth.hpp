#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "streamdec/text_stream.hpp"

namespace streamdec {

// Grapheme id layout: 0 = blank, 1..n_letters = letters ('a'...),
// n_letters+1 = word separator '_', n_letters+2 = EOS. Letters and the
// separator are renderable; blank and EOS are not.
struct GraphemeAlphabet {
  int n_letters = 10;

  int blank_id() const { return 0; }
  int separator_id() const { return n_letters + 1; }
  int eos_id() const { return n_letters + 2; }
  int n_ids() const { return n_letters + 3; }        // model grapheme vocab
  int n_renderable() const { return n_letters + 1; }  // letters + separator
  bool renderable(int g) const { return g >= 1 && g <= n_letters + 1; }
  char to_char(int g) const;
  int from_char(char c) const;
  std::string to_string(std::span<const int> gs) const;
};

// Frame stream: per step one grapheme code plus Q acoustic codes.
struct Frame {
  int grapheme = 0;
  std::vector<int> codes;
};

struct FrameSeq {
  int n_codebooks = 0;
  std::vector<int> graphemes;  // [T]
  std::vector<int> codes;      // [T * Q], row-major

  int64_t size() const { return static_cast<int64_t>(graphemes.size()); }
  std::span<const int> frame_codes(int64_t t) const {
    return {codes.data() + t * n_codebooks, static_cast<size_t>(n_codebooks)};
  }
  void push(int grapheme, std::span<const int> frame);
};

// The synthetic codec: a bank of prototype code tables. Per prototype p
// and codebook q, (grapheme, phase) -> code is a collision-free injection.
// Speakers pick one prototype per codebook, so an unseen speaker is an
// unseen combination of per-codebook behaviors.
struct ToyCodec {
  GraphemeAlphabet alphabet;
  int n_codebooks = 4;
  int codebook_size = 64;
  int n_protos = 12;
  int max_duration = 4;
  uint64_t master_seed = 0;
  std::vector<int> table;  // [proto][render_idx * max_duration + phase][q]

  static ToyCodec make(GraphemeAlphabet alphabet, int n_codebooks, int codebook_size,
                       int n_protos, uint64_t master_seed);
  int code(int proto, int grapheme, int phase, int q) const;
};

struct SpeakerSpec {
  uint64_t speaker_id = 0;
  std::vector<int> durations;  // per renderable grapheme id offset (g-1), in {2,3,4}
  std::vector<int> proto_sel;  // per codebook

  int duration(int grapheme) const { return durations[static_cast<size_t>(grapheme - 1)]; }
  int code(const ToyCodec& codec, int grapheme, int phase, int q) const {
    return codec.code(proto_sel[static_cast<size_t>(q)], grapheme, phase, q);
  }
};

SpeakerSpec gen_speaker(const ToyCodec& codec, uint64_t seed);

struct RenderResult {
  FrameSeq frames;
  std::vector<int> aligned;  // grapheme per frame, same length as frames
};

// Each grapheme g emits duration(g) frames; acoustic codes follow the
// speaker mapping, the grapheme channel carries g itself.
RenderResult render_speech(std::span<const int> graphemes, const SpeakerSpec& speaker,
                           const ToyCodec& codec);

// Inverts acoustic codes to graphemes: per frame, majority vote across
// codebooks over (grapheme, phase) candidates, then phase-aware run
// collapse. Exact inverse of render_speech on clean frames.
std::vector<int> transcribe_oracle(const FrameSeq& frames, const SpeakerSpec& speaker,
                                   const ToyCodec& codec);

struct WordVocab {
  std::vector<std::vector<int>> spellings;  // word id -> letter ids
  int eos_word_id() const { return static_cast<int>(spellings.size()); }
  int n_tokens() const { return static_cast<int>(spellings.size()) + 1; }

  static WordVocab make(int n_words, const GraphemeAlphabet& alphabet, int len_min,
                        int len_max, uint64_t seed);
  // Graphemes of a word sequence, separator between words. EOS word ids
  // are skipped.
  std::vector<int> expand(std::span<const int> word_ids, const GraphemeAlphabet& alphabet,
                          int eos_word) const;
};

struct DatasetRecord {
  uint64_t speaker_seed = 0;
  std::vector<int> words;       // word ids, no EOS
  std::vector<int> word_times;  // cumulative end frame per word
  std::vector<TextChunk> chunks;
  FrameSeq enrollment;
  FrameSeq target;
  std::vector<int> aligned;  // dense aligned grapheme stream
};

struct CorpusConfig {
  int n_train = 2000;
  int n_eval = 100;
  int vocab_words = 200;
  int word_len_min = 2;
  int word_len_max = 4;
  int words_min = 4;
  int words_max = 9;
  int l_min = 2;
  int l_max = 4;
  int n_train_speakers = 64;
  int n_eval_speakers = 16;
  int n_letters = 10;
  int n_codebooks = 4;
  int codebook_size = 64;
  int n_protos = 12;
  int enroll_reps = 2;
  int frame_rate = 25;
  uint64_t seed = 7;
};

struct Corpus {
  CorpusConfig config;
  ToyCodec codec;
  WordVocab vocab;
  std::vector<DatasetRecord> train;
  std::vector<DatasetRecord> eval;
};

// Deterministic per seed; eval speakers are drawn from a pool disjoint
// from the train pool.
Corpus gen_corpus(const CorpusConfig& config);

// One record per line, self-describing JSON (schema in the README).
void write_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir, bool load_train = true, bool load_eval = true);

std::string corpus_config_hash(const CorpusConfig& config);

}  // namespace streamdec
