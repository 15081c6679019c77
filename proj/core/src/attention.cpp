#include "streamdec/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace streamdec {

void cross_attention(std::span<const double> q_t, int64_t t, const AttnMemory& mem,
                     int heads, const RopeConfig& rope, std::span<double> out,
                     AttnScratch& scratch, std::vector<double>* weights_out) {
  const int64_t dk = mem.dk;
  const int64_t hd = dk / heads;
  if (static_cast<int64_t>(q_t.size()) != dk || static_cast<int64_t>(out.size()) != dk) {
    throw std::invalid_argument("cross_attention: q/out size != dk");
  }
  if (hd != rope.head_dim) throw std::invalid_argument("cross_attention: head_dim mismatch");
  const int64_t total = mem.n_enr + mem.n_txt;
  if (total == 0) throw std::runtime_error("cross_attention: empty memory");
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  scratch.scores.resize(static_cast<size_t>(total));
  scratch.q_rot.assign(q_t.begin(), q_t.end());
  rope_rotate_heads_inplace(scratch.q_rot, t, heads, rope);
  const double* k_txt = mem.k_txt.data();
  if (!mem.keys_prerotated && mem.n_txt > 0) {
    scratch.k_rot.assign(mem.k_txt.begin(), mem.k_txt.end());
    for (int64_t j = 0; j < mem.n_txt; ++j) {
      rope_rotate_heads_inplace(
          std::span<double>(scratch.k_rot.data() + j * dk, static_cast<size_t>(dk)),
          mem.pos_ids[static_cast<size_t>(j)], heads, rope);
    }
    k_txt = scratch.k_rot.data();
  }

  for (int h = 0; h < heads; ++h) {
    const int64_t off = h * hd;
    const double* qh = q_t.data() + off;
    const double* qrh = scratch.q_rot.data() + off;
    bool any = false;
    for (int64_t j = 0; j < mem.n_enr; ++j) {
      const double* kj = mem.k_enr.data() + j * dk + off;
      double s = 0.0;
#pragma omp simd reduction(+ : s)
      for (int64_t c = 0; c < hd; ++c) s += qh[c] * kj[c];
      scratch.scores[static_cast<size_t>(j)] = s * inv_sqrt;
      any = true;
    }
    for (int64_t j = 0; j < mem.n_txt; ++j) {
      if (!mem.valid.empty() && mem.valid[static_cast<size_t>(j)] == 0) {
        scratch.scores[static_cast<size_t>(mem.n_enr + j)] = kMaskValue;
        continue;
      }
      const double* kj = k_txt + j * dk + off;
      double s = 0.0;
#pragma omp simd reduction(+ : s)
      for (int64_t c = 0; c < hd; ++c) s += qrh[c] * kj[c];
      scratch.scores[static_cast<size_t>(mem.n_enr + j)] = s * inv_sqrt;
      any = true;
    }
    if (!any) throw std::runtime_error("cross_attention: all entries masked");
    softmax_inplace(scratch.scores);
    double* oh = out.data() + off;
    std::fill(oh, oh + hd, 0.0);
    for (int64_t j = 0; j < total; ++j) {
      const double w = scratch.scores[static_cast<size_t>(j)];
      if (w == 0.0) continue;
      const double* vj = j < mem.n_enr ? mem.v_enr.data() + j * dk + off
                                       : mem.v_txt.data() + (j - mem.n_enr) * dk + off;
      for (int64_t c = 0; c < hd; ++c) oh[c] += w * vj[c];
    }
    if (weights_out != nullptr) {
      weights_out->insert(weights_out->end(), scratch.scores.begin(), scratch.scores.end());
    }
  }
}

std::vector<uint8_t> dropout_window_mask(std::span<const uint8_t> kv_mask,
                                         std::span<const int64_t> key_pos_ids,
                                         int64_t seq_len, int64_t r1, int64_t r2,
                                         const UnitSampler& unit) {
  const int64_t total = static_cast<int64_t>(kv_mask.size());
  if (total == 0) throw std::invalid_argument("dropout_window_mask: empty kv_mask");
  int64_t kv_len = 0;
  while (kv_len < total && kv_mask[static_cast<size_t>(kv_len)] != 0) ++kv_len;
  for (int64_t j = kv_len; j < total; ++j) {
    if (kv_mask[static_cast<size_t>(j)] != 0) {
      throw std::invalid_argument("dropout_window_mask: valid keys must be a prefix");
    }
  }
  if (kv_len == 0) throw std::invalid_argument("dropout_window_mask: no valid keys");
  if (r1 < 0 || r2 < 0) throw std::invalid_argument("dropout_window_mask: negative range");

  std::vector<uint8_t> mask(static_cast<size_t>(seq_len * total), 0);
  for (int64_t qp = 0; qp < seq_len; ++qp) {
    // key whose position id is nearest to this query position
    int64_t closest = 0;
    int64_t best = std::numeric_limits<int64_t>::max();
    for (int64_t j = 0; j < kv_len; ++j) {
      const int64_t dist = std::abs(qp - key_pos_ids[static_cast<size_t>(j)]);
      if (dist < best) {
        best = dist;
        closest = j;
      }
    }
    const int64_t left_core = std::max<int64_t>(0, closest - r1);
    const int64_t right_core = std::min<int64_t>(kv_len - 1, closest + r2);
    // start uniform in [0, left_core], end in [right_core, kv_len-1]; a
    // zero draw keeps exactly the core window
    const int64_t start =
        left_core - static_cast<int64_t>(std::floor(unit() * static_cast<double>(left_core + 1)));
    const int64_t end =
        right_core +
        static_cast<int64_t>(std::floor(unit() * static_cast<double>(kv_len - right_core)));
    uint8_t* row = mask.data() + qp * total;
    for (int64_t j = std::max<int64_t>(0, start); j <= std::min(end, kv_len - 1); ++j) {
      row[j] = 1;
    }
  }
  return mask;
}

std::vector<uint8_t> dropout_window_mask(std::span<const uint8_t> kv_mask,
                                         std::span<const int64_t> key_pos_ids,
                                         int64_t seq_len, int64_t r1, int64_t r2,
                                         Rng& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  return dropout_window_mask(kv_mask, key_pos_ids, seq_len, r1, r2,
                             UnitSampler([&]() { return dist(rng); }));
}

Tensor apply_mask_weights(const Tensor& pre_scores, std::span<const uint8_t> kv_mask,
                          std::span<const int64_t> key_pos_ids, int64_t seq_len,
                          std::optional<std::pair<int64_t, int64_t>> window_range,
                          Rng* rng) {
  const int64_t nq = pre_scores.dim(0);
  const int64_t nk = pre_scores.dim(1);
  if (nq != seq_len || static_cast<int64_t>(kv_mask.size()) != nk) {
    throw std::invalid_argument("apply_mask_weights: shape mismatch");
  }
  std::vector<uint8_t> window;
  if (window_range.has_value() && rng != nullptr) {
    window = dropout_window_mask(kv_mask, key_pos_ids, seq_len, window_range->first,
                                 window_range->second, *rng);
  }
  Tensor w = pre_scores;
  for (int64_t i = 0; i < nq; ++i) {
    double* row = w.data.data() + i * nk;
    bool any = false;
    for (int64_t j = 0; j < nk; ++j) {
      const bool visible = kv_mask[static_cast<size_t>(j)] != 0 &&
                           (window.empty() || window[static_cast<size_t>(i * nk + j)] != 0);
      if (visible) {
        any = true;
      } else {
        row[j] += kMaskValue;
      }
    }
    if (!any) throw std::runtime_error("apply_mask_weights: query with zero visible keys");
    softmax_inplace(std::span<double>(row, static_cast<size_t>(nk)));
  }
  return w;
}

}  // namespace streamdec
