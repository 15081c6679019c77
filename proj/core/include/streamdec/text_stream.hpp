#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "streamdec/tensor.hpp"

namespace streamdec {

// "No limit" for n_p / n_f.
constexpr int kUnbounded = std::numeric_limits<int>::max();

// A short run of word tokens delivered together. `arrival` is the frame
// index at which the chunk becomes available (the alignment time of its
// last word); `interval` is arrival minus the previous chunk's arrival.
struct TextChunk {
  std::vector<int> tokens;
  int interval = 0;
  int arrival = 0;
};

struct PositionedToken {
  int token = 0;
  int64_t pos = 0;
};

// Splits word tokens into chunks of uniformly drawn sizes in
// [l_min, l_max] (the last chunk may be smaller). word_times[i] is the
// alignment frame of token i (nondecreasing). The EOS token is appended
// to the final chunk with its time set to the total duration; it does not
// count toward the chunk-size bounds.
std::vector<TextChunk> make_chunks(std::span<const int> word_tokens,
                                   std::span<const int> word_times, int l_min, int l_max,
                                   int eos_token, Rng& rng);

// Consecutive indices starting at each chunk's arrival time; indices of
// different chunks may overlap or gap.
std::vector<PositionedToken> assign_positions(std::span<const TextChunk> chunks);

// Current chunk index (1-based): largest i with arrival_i <= t, clamped to
// 1 below the first arrival and to `available` above the last.
int current_chunk_index(std::span<const TextChunk> chunks, int64_t t);

// Window of chunk indices (1-based, inclusive) visible at step t:
// first = max(1, c - n_p), last = min(available, c + n_f).
struct WindowRange {
  int first = 1;
  int last = 1;
};
WindowRange window_at(int current_chunk, int available, int n_p, int n_f);

}  // namespace streamdec
