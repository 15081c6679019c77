#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "streamdec/graph.hpp"

namespace streamdec {

// Rotary position encoding. head_dim must be even; coordinate pairs
// (2j, 2j+1) are rotated by pos * base^(-2j/head_dim).
struct RopeConfig {
  int head_dim;
  double base;

  explicit RopeConfig(int head_dim, double base = 10000.0);
  // inverse frequencies, precomputed per pair
  std::vector<double> inv_freq;
};

void rope_rotate_inplace(std::span<double> x, int64_t pos, const RopeConfig& cfg);
std::vector<double> rope_rotate(std::span<const double> x, int64_t pos,
                                const RopeConfig& cfg);

// Rotates each head slice of every row by that row's position. x is
// [rows, heads*head_dim]. Used on the tape during training.
Var rope_rows_train(Graph& g, Var x, std::vector<int64_t> positions, int heads,
                    const RopeConfig& cfg);

// Same, no tape.
void rope_rotate_heads_inplace(std::span<double> x, int64_t pos, int heads,
                               const RopeConfig& cfg);

}  // namespace streamdec
