#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "streamdec/rope.hpp"
#include "streamdec/tensor.hpp"

namespace streamdec {

// Cross-attention memory for one decode step: a position-agnostic
// enrollment block plus a windowed text block whose keys carry positional
// indices. Text keys are stored pre-rotated by their position.
struct AttnMemory {
  std::span<const double> k_enr, v_enr;  // [n_enr * dk]
  int64_t n_enr = 0;
  std::span<const double> k_txt, v_txt;  // [n_txt * dk]
  std::span<const int64_t> pos_ids;      // [n_txt]
  std::span<const uint8_t> valid;        // [n_txt]; empty = all valid
  int64_t n_txt = 0;
  int64_t dk = 0;
  // true when k_txt rows were already rotated by their position
  bool keys_prerotated = false;
};

struct AttnScratch {
  std::vector<double> scores;
  std::vector<double> q_rot;
  std::vector<double> k_rot;
};

// Single softmax over [enrollment ; text]: enrollment scores use the raw
// query, text scores use the query rotated to step t. Returns the
// head-concatenated context in `out` (no output projection). When
// `weights_out` is non-null the full attention distribution is appended
// to it (n_enr + n_txt values per head).
void cross_attention(std::span<const double> q_t, int64_t t, const AttnMemory& mem,
                     int heads, const RopeConfig& rope, std::span<double> out,
                     AttnScratch& scratch, std::vector<double>* weights_out = nullptr);

// Per-query random visibility window over the keys, always containing the
// key nearest to the query position. r1/r2 bound the guaranteed core in
// key-index units; values >= kv_len disable dropout on that side.
// kv_mask marks valid keys (must be a prefix). Returns seq_len rows of
// kv_mask.size() flags. The UnitSampler overload exists so tests can pin
// the draws (0 keeps exactly the core window).
using UnitSampler = std::function<double()>;
std::vector<uint8_t> dropout_window_mask(std::span<const uint8_t> kv_mask,
                                         std::span<const int64_t> key_pos_ids,
                                         int64_t seq_len, int64_t r1, int64_t r2,
                                         const UnitSampler& unit);
std::vector<uint8_t> dropout_window_mask(std::span<const uint8_t> kv_mask,
                                         std::span<const int64_t> key_pos_ids,
                                         int64_t seq_len, int64_t r1, int64_t r2,
                                         Rng& rng);

// Combines the base key mask with a sampled dropout window, pushes masked
// scores to -1e9 and softmaxes each row. rng == nullptr skips the dropout
// window. Throws if any query ends up with zero visible keys.
Tensor apply_mask_weights(const Tensor& pre_scores, std::span<const uint8_t> kv_mask,
                          std::span<const int64_t> key_pos_ids, int64_t seq_len,
                          std::optional<std::pair<int64_t, int64_t>> window_range,
                          Rng* rng);

constexpr double kMaskValue = -1e9;

}  // namespace streamdec
