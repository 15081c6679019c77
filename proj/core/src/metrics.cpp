#include "streamdec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace streamdec {

int64_t edit_distance(std::string_view a, std::string_view b) {
  return edit_distance<char>({a.data(), a.size()}, {b.data(), b.size()});
}

int64_t edit_distance(std::span<const int> a, std::span<const int> b) {
  return edit_distance<int>(a, b);
}

double cer(std::string_view hyp, std::string_view ref) {
  if (ref.empty()) throw std::invalid_argument("cer: empty reference");
  return static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
}

double cer(std::span<const int> hyp, std::span<const int> ref) {
  if (ref.empty()) throw std::invalid_argument("cer: empty reference");
  return static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
}

double wer(std::span<const int> hyp_words, std::span<const int> ref_words) {
  if (ref_words.empty()) throw std::invalid_argument("wer: empty reference");
  return static_cast<double>(edit_distance(hyp_words, ref_words)) /
         static_cast<double>(ref_words.size());
}

namespace {
double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const size_t idx = static_cast<size_t>(
      std::min<double>(static_cast<double>(xs.size()) - 1.0,
                       std::floor(q * static_cast<double>(xs.size()))));
  return xs[idx];
}
}  // namespace

SyncReport sync_stats(const SessionLog& log) {
  const size_t n_chunks = log.chunk_intervals.size();
  if (n_chunks == 0 || log.frame_chunk.empty()) {
    throw std::invalid_argument("sync_stats: empty log");
  }
  if (log.frame_chunk.size() != log.step_seconds.size()) {
    throw std::invalid_argument("sync_stats: truncated log (frames vs latency samples)");
  }
  SyncReport rep;
  std::vector<int64_t> counts(n_chunks, 0);
  for (int c : log.frame_chunk) {
    if (c < 1 || static_cast<size_t>(c) > n_chunks) {
      throw std::invalid_argument("sync_stats: truncated log (chunk index out of range)");
    }
    ++counts[static_cast<size_t>(c - 1)];
  }
  rep.chunk_lag.resize(n_chunks);
  double abs_sum = 0.0;
  for (size_t i = 0; i < n_chunks; ++i) {
    rep.chunk_lag[i] = counts[i] - log.chunk_intervals[i];
    rep.max_abs_lag = std::max(rep.max_abs_lag, std::abs(rep.chunk_lag[i]));
    abs_sum += static_cast<double>(std::abs(rep.chunk_lag[i]));
    rep.total_budget += log.chunk_intervals[i];
  }
  rep.mean_abs_lag = abs_sum / static_cast<double>(n_chunks);
  rep.total_frames = static_cast<int64_t>(log.frame_chunk.size());

  rep.latency_p50 = quantile(log.step_seconds, 0.50);
  rep.latency_p90 = quantile(log.step_seconds, 0.90);
  rep.latency_p99 = quantile(log.step_seconds, 0.99);

  const size_t n = log.step_seconds.size();
  const size_t quarter = std::max<size_t>(1, n / 4);
  std::vector<double> head(log.step_seconds.begin(),
                           log.step_seconds.begin() + static_cast<ptrdiff_t>(quarter));
  std::vector<double> tail(log.step_seconds.end() - static_cast<ptrdiff_t>(quarter),
                           log.step_seconds.end());
  const double h = quantile(std::move(head), 0.5);
  const double t = quantile(std::move(tail), 0.5);
  rep.flatness_ratio = h > 0.0 ? t / h : 0.0;
  return rep;
}

}  // namespace streamdec
