#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace streamdec {

// Levenshtein distance (insert/delete/substitute, unit costs).
template <typename T>
int64_t edit_distance(std::span<const T> a, std::span<const T> b) {
  const size_t m = a.size(), n = b.size();
  std::vector<int64_t> prev(n + 1), cur(n + 1);
  for (size_t j = 0; j <= n; ++j) prev[j] = static_cast<int64_t>(j);
  for (size_t i = 1; i <= m; ++i) {
    cur[0] = static_cast<int64_t>(i);
    for (size_t j = 1; j <= n; ++j) {
      const int64_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min(sub, std::min(prev[j], cur[j - 1]) + 1);
    }
    std::swap(prev, cur);
  }
  return prev[n];
}

int64_t edit_distance(std::string_view a, std::string_view b);
int64_t edit_distance(std::span<const int> a, std::span<const int> b);

// edit_distance / |ref|; empty ref throws.
double cer(std::string_view hyp, std::string_view ref);
double cer(std::span<const int> hyp, std::span<const int> ref);
double wer(std::span<const int> hyp_words, std::span<const int> ref_words);

// Completed decode session: per-frame chunk attribution plus wall-clock
// step latencies.
struct SessionLog {
  std::vector<int> chunk_intervals;    // budget t_i per chunk, 1-based order
  std::vector<int> frame_chunk;        // c(t) for each generated frame
  std::vector<double> step_seconds;    // one entry per generated frame
};

struct SyncReport {
  std::vector<int64_t> chunk_lag;  // attributed frames minus budget
  int64_t max_abs_lag = 0;
  double mean_abs_lag = 0.0;
  double latency_p50 = 0.0;
  double latency_p90 = 0.0;
  double latency_p99 = 0.0;
  // median latency of the last quarter of steps over the first quarter
  double flatness_ratio = 0.0;
  int64_t total_frames = 0;
  int64_t total_budget = 0;
};

SyncReport sync_stats(const SessionLog& log);

}  // namespace streamdec
