#include "streamdec/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "streamdec/util.hpp"

namespace streamdec {

using nlohmann::json;

char GraphemeAlphabet::to_char(int g) const {
  if (g == blank_id()) return '.';
  if (g == separator_id()) return '_';
  if (g == eos_id()) return '$';
  if (g >= 1 && g <= n_letters) return static_cast<char>('a' + g - 1);
  throw std::out_of_range("GraphemeAlphabet: bad id");
}

int GraphemeAlphabet::from_char(char c) const {
  if (c == '.') return blank_id();
  if (c == '_') return separator_id();
  if (c == '$') return eos_id();
  if (c >= 'a' && c < 'a' + n_letters) return c - 'a' + 1;
  throw std::out_of_range("GraphemeAlphabet: bad char");
}

std::string GraphemeAlphabet::to_string(std::span<const int> gs) const {
  std::string s;
  s.reserve(gs.size());
  for (int g : gs) s.push_back(to_char(g));
  return s;
}

void FrameSeq::push(int grapheme, std::span<const int> frame) {
  graphemes.push_back(grapheme);
  codes.insert(codes.end(), frame.begin(), frame.end());
}

ToyCodec ToyCodec::make(GraphemeAlphabet alphabet, int n_codebooks, int codebook_size,
                        int n_protos, uint64_t master_seed) {
  ToyCodec c;
  c.alphabet = alphabet;
  c.n_codebooks = n_codebooks;
  c.codebook_size = codebook_size;
  c.n_protos = n_protos;
  c.master_seed = master_seed;
  const int pairs = alphabet.n_renderable() * c.max_duration;
  if (pairs > codebook_size) {
    throw std::invalid_argument("ToyCodec: codebook too small for collision-free mapping");
  }
  c.table.resize(static_cast<size_t>(n_protos) * static_cast<size_t>(pairs) *
                 static_cast<size_t>(n_codebooks));
  for (int p = 0; p < n_protos; ++p) {
    for (int q = 0; q < n_codebooks; ++q) {
      Rng rng(derive_seed(master_seed, static_cast<uint64_t>(p) * 97 + 13,
                          static_cast<uint64_t>(q)));
      std::vector<int> codes(static_cast<size_t>(codebook_size));
      std::iota(codes.begin(), codes.end(), 0);
      std::shuffle(codes.begin(), codes.end(), rng);
      for (int pair = 0; pair < pairs; ++pair) {
        c.table[(static_cast<size_t>(p) * pairs + static_cast<size_t>(pair)) * n_codebooks +
                static_cast<size_t>(q)] = codes[static_cast<size_t>(pair)];
      }
    }
  }
  return c;
}

int ToyCodec::code(int proto, int grapheme, int phase, int q) const {
  const int pairs = alphabet.n_renderable() * max_duration;
  const int pair = (grapheme - 1) * max_duration + phase;
  return table[(static_cast<size_t>(proto) * pairs + static_cast<size_t>(pair)) *
                   n_codebooks +
               static_cast<size_t>(q)];
}

SpeakerSpec gen_speaker(const ToyCodec& codec, uint64_t seed) {
  SpeakerSpec s;
  s.speaker_id = seed;
  Rng rng(mix64(seed));
  std::uniform_int_distribution<int> dur(2, 4);
  s.durations.resize(static_cast<size_t>(codec.alphabet.n_renderable()));
  for (int& d : s.durations) d = dur(rng);
  std::uniform_int_distribution<int> proto(0, codec.n_protos - 1);
  s.proto_sel.resize(static_cast<size_t>(codec.n_codebooks));
  for (int& p : s.proto_sel) p = proto(rng);
  return s;
}

RenderResult render_speech(std::span<const int> graphemes, const SpeakerSpec& speaker,
                           const ToyCodec& codec) {
  if (graphemes.empty()) throw std::invalid_argument("render_speech: empty text");
  RenderResult r;
  r.frames.n_codebooks = codec.n_codebooks;
  std::vector<int> frame(static_cast<size_t>(codec.n_codebooks));
  for (int g : graphemes) {
    if (!codec.alphabet.renderable(g)) {
      throw std::invalid_argument("render_speech: unknown grapheme id " + std::to_string(g));
    }
    const int d = speaker.duration(g);
    for (int phase = 0; phase < d; ++phase) {
      for (int q = 0; q < codec.n_codebooks; ++q) {
        frame[static_cast<size_t>(q)] = speaker.code(codec, g, phase, q);
      }
      r.frames.push(g, frame);
      r.aligned.push_back(g);
    }
  }
  return r;
}

std::vector<int> transcribe_oracle(const FrameSeq& frames, const SpeakerSpec& speaker,
                                   const ToyCodec& codec) {
  std::vector<int> out;
  int prev_g = -1, prev_phase = -1;
  for (int64_t t = 0; t < frames.size(); ++t) {
    const auto fc = frames.frame_codes(t);
    int best_g = 1, best_phase = 0, best_votes = -1;
    for (int g = 1; g <= codec.alphabet.n_renderable(); ++g) {
      for (int phase = 0; phase < codec.max_duration; ++phase) {
        int votes = 0;
        for (int q = 0; q < codec.n_codebooks; ++q) {
          if (fc[static_cast<size_t>(q)] == speaker.code(codec, g, phase, q)) ++votes;
        }
        if (votes > best_votes) {
          best_votes = votes;
          best_g = g;
          best_phase = phase;
        }
      }
    }
    // phase-aware run collapse: a repeated grapheme starts a new character
    // when its phase counter restarts
    if (t == 0 || best_g != prev_g || best_phase != prev_phase + 1) out.push_back(best_g);
    prev_g = best_g;
    prev_phase = best_phase;
  }
  return out;
}

WordVocab WordVocab::make(int n_words, const GraphemeAlphabet& alphabet, int len_min,
                          int len_max, uint64_t seed) {
  double possible = 0.0;
  for (int l = len_min; l <= len_max; ++l) possible += std::pow(alphabet.n_letters, l);
  if (static_cast<double>(n_words) > possible) {
    throw std::invalid_argument("WordVocab: vocab too small for requested distinct words");
  }
  Rng rng(mix64(seed));
  std::uniform_int_distribution<int> len_dist(len_min, len_max);
  std::uniform_int_distribution<int> letter(1, alphabet.n_letters);
  std::set<std::vector<int>> seen;
  WordVocab v;
  while (static_cast<int>(v.spellings.size()) < n_words) {
    std::vector<int> w(static_cast<size_t>(len_dist(rng)));
    for (int& g : w) g = letter(rng);
    if (seen.insert(w).second) v.spellings.push_back(std::move(w));
  }
  return v;
}

std::vector<int> WordVocab::expand(std::span<const int> word_ids,
                                   const GraphemeAlphabet& alphabet, int eos_word) const {
  std::vector<int> out;
  bool first = true;
  for (int w : word_ids) {
    if (w == eos_word) continue;
    if (w < 0 || w >= static_cast<int>(spellings.size())) {
      throw std::out_of_range("WordVocab::expand: bad word id");
    }
    if (!first) out.push_back(alphabet.separator_id());
    first = false;
    const auto& sp = spellings[static_cast<size_t>(w)];
    out.insert(out.end(), sp.begin(), sp.end());
  }
  return out;
}

namespace {

DatasetRecord gen_record(const CorpusConfig& cfg, const ToyCodec& codec,
                         const WordVocab& vocab, uint64_t speaker_seed, Rng& rng) {
  DatasetRecord rec;
  rec.speaker_seed = speaker_seed;
  const SpeakerSpec spk = gen_speaker(codec, speaker_seed);
  std::uniform_int_distribution<int> n_words_dist(cfg.words_min, cfg.words_max);
  std::uniform_int_distribution<int> word_dist(0, static_cast<int>(vocab.spellings.size()) - 1);
  const int n_words = n_words_dist(rng);
  rec.words.resize(static_cast<size_t>(n_words));
  for (int& w : rec.words) w = word_dist(rng);

  // per-word end times: each word's content is its letters plus a trailing
  // separator (except the last word)
  int t = 0;
  for (size_t i = 0; i < rec.words.size(); ++i) {
    for (int g : vocab.spellings[static_cast<size_t>(rec.words[i])]) t += spk.duration(g);
    if (i + 1 < rec.words.size()) t += spk.duration(codec.alphabet.separator_id());
    rec.word_times.push_back(t);
  }

  const std::vector<int> graphemes =
      vocab.expand(rec.words, codec.alphabet, vocab.eos_word_id());
  RenderResult target = render_speech(graphemes, spk, codec);
  rec.target = std::move(target.frames);
  rec.aligned = std::move(target.aligned);
  if (static_cast<int>(rec.aligned.size()) != rec.word_times.back()) {
    throw std::logic_error("gen_record: duration accounting mismatch");
  }

  // enrollment covers every renderable grapheme a few times, in random order
  std::vector<int> enr;
  for (int rep = 0; rep < cfg.enroll_reps; ++rep) {
    std::vector<int> order(static_cast<size_t>(codec.alphabet.n_renderable()));
    std::iota(order.begin(), order.end(), 1);
    std::shuffle(order.begin(), order.end(), rng);
    enr.insert(enr.end(), order.begin(), order.end());
  }
  rec.enrollment = render_speech(enr, spk, codec).frames;

  rec.chunks = make_chunks(rec.words, rec.word_times, cfg.l_min, cfg.l_max,
                           vocab.eos_word_id(), rng);
  return rec;
}

json frames_to_json(const FrameSeq& fs) {
  json arr = json::array();
  for (int64_t t = 0; t < fs.size(); ++t) {
    json f = json::array();
    f.push_back(fs.graphemes[static_cast<size_t>(t)]);
    for (int c : fs.frame_codes(t)) f.push_back(c);
    arr.push_back(std::move(f));
  }
  return arr;
}

FrameSeq frames_from_json(const json& arr, int n_codebooks) {
  FrameSeq fs;
  fs.n_codebooks = n_codebooks;
  for (const auto& f : arr) {
    fs.graphemes.push_back(f.at(0).get<int>());
    for (int q = 0; q < n_codebooks; ++q) fs.codes.push_back(f.at(1 + q).get<int>());
  }
  return fs;
}

json record_to_json(const DatasetRecord& rec, const Corpus& corpus) {
  json j;
  j["speaker_seed"] = rec.speaker_seed;
  j["words"] = rec.words;
  std::string text;
  for (size_t i = 0; i < rec.words.size(); ++i) {
    if (i > 0) text.push_back('_');
    text += corpus.codec.alphabet.to_string(
        corpus.vocab.spellings[static_cast<size_t>(rec.words[i])]);
  }
  j["text"] = text;
  j["word_times"] = rec.word_times;
  json chunks = json::array();
  for (const TextChunk& c : rec.chunks) {
    chunks.push_back({{"tokens", c.tokens}, {"t", c.interval}, {"tau", c.arrival}});
  }
  j["chunks"] = std::move(chunks);
  j["enrollment_frames"] = frames_to_json(rec.enrollment);
  j["target_frames"] = frames_to_json(rec.target);
  j["aligned_graphemes"] = rec.aligned;
  return j;
}

DatasetRecord record_from_json(const json& j, int n_codebooks) {
  DatasetRecord rec;
  rec.speaker_seed = j.at("speaker_seed").get<uint64_t>();
  rec.words = j.at("words").get<std::vector<int>>();
  rec.word_times = j.at("word_times").get<std::vector<int>>();
  for (const auto& c : j.at("chunks")) {
    TextChunk tc;
    tc.tokens = c.at("tokens").get<std::vector<int>>();
    tc.interval = c.at("t").get<int>();
    tc.arrival = c.at("tau").get<int>();
    rec.chunks.push_back(std::move(tc));
  }
  rec.enrollment = frames_from_json(j.at("enrollment_frames"), n_codebooks);
  rec.target = frames_from_json(j.at("target_frames"), n_codebooks);
  rec.aligned = j.at("aligned_graphemes").get<std::vector<int>>();
  return rec;
}

json config_to_json(const CorpusConfig& c) {
  json j;
  j["n_train"] = c.n_train;
  j["n_eval"] = c.n_eval;
  j["vocab_words"] = c.vocab_words;
  j["word_len_min"] = c.word_len_min;
  j["word_len_max"] = c.word_len_max;
  j["words_min"] = c.words_min;
  j["words_max"] = c.words_max;
  j["l_min"] = c.l_min;
  j["l_max"] = c.l_max;
  j["n_train_speakers"] = c.n_train_speakers;
  j["n_eval_speakers"] = c.n_eval_speakers;
  j["n_letters"] = c.n_letters;
  j["n_codebooks"] = c.n_codebooks;
  j["codebook_size"] = c.codebook_size;
  j["n_protos"] = c.n_protos;
  j["enroll_reps"] = c.enroll_reps;
  j["frame_rate"] = c.frame_rate;
  j["seed"] = c.seed;
  return j;
}

CorpusConfig config_from_json(const json& j) {
  CorpusConfig c;
  c.n_train = j.at("n_train").get<int>();
  c.n_eval = j.at("n_eval").get<int>();
  c.vocab_words = j.at("vocab_words").get<int>();
  c.word_len_min = j.at("word_len_min").get<int>();
  c.word_len_max = j.at("word_len_max").get<int>();
  c.words_min = j.at("words_min").get<int>();
  c.words_max = j.at("words_max").get<int>();
  c.l_min = j.at("l_min").get<int>();
  c.l_max = j.at("l_max").get<int>();
  c.n_train_speakers = j.at("n_train_speakers").get<int>();
  c.n_eval_speakers = j.at("n_eval_speakers").get<int>();
  c.n_letters = j.at("n_letters").get<int>();
  c.n_codebooks = j.at("n_codebooks").get<int>();
  c.codebook_size = j.at("codebook_size").get<int>();
  c.n_protos = j.at("n_protos").get<int>();
  c.enroll_reps = j.at("enroll_reps").get<int>();
  c.frame_rate = j.at("frame_rate").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

}  // namespace

Corpus gen_corpus(const CorpusConfig& cfg) {
  if (cfg.n_train < 1 || cfg.n_eval < 0) throw std::invalid_argument("gen_corpus: bad sizes");
  Corpus c;
  c.config = cfg;
  GraphemeAlphabet alphabet{cfg.n_letters};
  c.codec = ToyCodec::make(alphabet, cfg.n_codebooks, cfg.codebook_size, cfg.n_protos,
                           derive_seed(cfg.seed, 0xC0DEC));
  c.vocab = WordVocab::make(cfg.vocab_words, alphabet, cfg.word_len_min, cfg.word_len_max,
                            derive_seed(cfg.seed, 0x70CAB));

  std::vector<uint64_t> train_speakers, eval_speakers;
  for (int i = 0; i < cfg.n_train_speakers; ++i) {
    train_speakers.push_back(derive_seed(cfg.seed, 0x5EED1, static_cast<uint64_t>(i)));
  }
  for (int i = 0; i < cfg.n_eval_speakers; ++i) {
    eval_speakers.push_back(derive_seed(cfg.seed, 0x5EED2, static_cast<uint64_t>(i)));
  }

  for (int i = 0; i < cfg.n_train; ++i) {
    Rng rng(derive_seed(cfg.seed, 0x42EC, static_cast<uint64_t>(i)));
    std::uniform_int_distribution<size_t> pick(0, train_speakers.size() - 1);
    c.train.push_back(gen_record(cfg, c.codec, c.vocab, train_speakers[pick(rng)], rng));
  }
  for (int i = 0; i < cfg.n_eval; ++i) {
    Rng rng(derive_seed(cfg.seed, 0x42ED, static_cast<uint64_t>(i)));
    std::uniform_int_distribution<size_t> pick(0, eval_speakers.size() - 1);
    c.eval.push_back(gen_record(cfg, c.codec, c.vocab, eval_speakers[pick(rng)], rng));
  }
  return c;
}

std::string corpus_config_hash(const CorpusConfig& config) {
  return to_hex(fnv1a(config_to_json(config).dump()));
}

void write_corpus(const Corpus& corpus, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    json manifest;
    manifest["config"] = config_to_json(corpus.config);
    manifest["config_hash"] = corpus_config_hash(corpus.config);
    manifest["codec_master_seed"] = corpus.codec.master_seed;
    json words = json::array();
    for (const auto& sp : corpus.vocab.spellings) {
      words.push_back(corpus.codec.alphabet.to_string(sp));
    }
    manifest["vocab"] = std::move(words);
    manifest["n_train"] = corpus.train.size();
    manifest["n_eval"] = corpus.eval.size();
    std::ofstream os(dir + "/manifest.json");
    os << manifest.dump(2) << "\n";
  }
  auto write_split = [&](const std::vector<DatasetRecord>& recs, const std::string& name) {
    std::ofstream os(dir + "/" + name);
    for (const DatasetRecord& r : recs) os << record_to_json(r, corpus).dump() << "\n";
  };
  write_split(corpus.train, "train.jsonl");
  write_split(corpus.eval, "eval.jsonl");
}

Corpus load_corpus(const std::string& dir, bool load_train, bool load_eval) {
  std::ifstream mf(dir + "/manifest.json");
  if (!mf) throw std::runtime_error("load_corpus: missing manifest in " + dir);
  json manifest = json::parse(mf);
  Corpus c;
  c.config = config_from_json(manifest.at("config"));
  GraphemeAlphabet alphabet{c.config.n_letters};
  c.codec = ToyCodec::make(alphabet, c.config.n_codebooks, c.config.codebook_size,
                           c.config.n_protos, manifest.at("codec_master_seed").get<uint64_t>());
  for (const auto& w : manifest.at("vocab")) {
    const std::string s = w.get<std::string>();
    std::vector<int> sp;
    for (char ch : s) sp.push_back(alphabet.from_char(ch));
    c.vocab.spellings.push_back(std::move(sp));
  }
  auto read_split = [&](const std::string& name, std::vector<DatasetRecord>& out) {
    std::ifstream is(dir + "/" + name);
    if (!is) throw std::runtime_error("load_corpus: missing " + name);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      out.push_back(record_from_json(json::parse(line), c.config.n_codebooks));
    }
  };
  if (load_train) read_split("train.jsonl", c.train);
  if (load_eval) read_split("eval.jsonl", c.eval);
  return c;
}

}  // namespace streamdec
