#include "streamdec/text_stream.hpp"

#include <stdexcept>

namespace streamdec {

std::vector<TextChunk> make_chunks(std::span<const int> word_tokens,
                                   std::span<const int> word_times, int l_min, int l_max,
                                   int eos_token, Rng& rng) {
  if (word_tokens.empty()) throw std::invalid_argument("make_chunks: empty token list");
  if (word_tokens.size() != word_times.size()) {
    throw std::invalid_argument("make_chunks: tokens/times length mismatch");
  }
  if (l_min < 1 || l_min > l_max) throw std::invalid_argument("make_chunks: bad l_min/l_max");
  for (size_t i = 1; i < word_times.size(); ++i) {
    if (word_times[i] < word_times[i - 1]) {
      throw std::invalid_argument("make_chunks: word_times must be nondecreasing");
    }
  }

  std::uniform_int_distribution<int> size_dist(l_min, l_max);
  std::vector<TextChunk> chunks;
  size_t i = 0;
  int prev_arrival = 0;
  while (i < word_tokens.size()) {
    const size_t want = static_cast<size_t>(size_dist(rng));
    const size_t take = std::min(want, word_tokens.size() - i);
    TextChunk c;
    c.tokens.assign(word_tokens.begin() + static_cast<ptrdiff_t>(i),
                    word_tokens.begin() + static_cast<ptrdiff_t>(i + take));
    c.arrival = word_times[i + take - 1];
    c.interval = c.arrival - prev_arrival;
    prev_arrival = c.arrival;
    chunks.push_back(std::move(c));
    i += take;
  }
  // EOS rides in the final chunk; its time is the total duration, which
  // equals the last word's alignment time, so arrival is unchanged.
  chunks.back().tokens.push_back(eos_token);
  return chunks;
}

std::vector<PositionedToken> assign_positions(std::span<const TextChunk> chunks) {
  std::vector<PositionedToken> out;
  for (const TextChunk& c : chunks) {
    for (size_t j = 0; j < c.tokens.size(); ++j) {
      out.push_back({c.tokens[j], static_cast<int64_t>(c.arrival) + static_cast<int64_t>(j)});
    }
  }
  return out;
}

int current_chunk_index(std::span<const TextChunk> chunks, int64_t t) {
  if (chunks.empty()) throw std::invalid_argument("current_chunk_index: no chunks");
  int c = 1;
  for (size_t i = 0; i < chunks.size(); ++i) {
    if (static_cast<int64_t>(chunks[i].arrival) <= t) c = static_cast<int>(i) + 1;
  }
  return c;
}

WindowRange window_at(int current_chunk, int available, int n_p, int n_f) {
  if (available < 1) throw std::invalid_argument("window_at: no chunks arrived");
  WindowRange w;
  w.first = n_p == kUnbounded ? 1 : std::max(1, current_chunk - n_p);
  const int64_t last =
      n_f == kUnbounded ? available
                        : std::min<int64_t>(available, static_cast<int64_t>(current_chunk) + n_f);
  w.last = static_cast<int>(last);
  if (w.first > w.last) w.first = w.last;
  return w;
}

}  // namespace streamdec
