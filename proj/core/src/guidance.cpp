#include "streamdec/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "streamdec/metrics.hpp"

namespace streamdec {

std::vector<int> ctc_decode(std::span<const int> seq, int blank) {
  std::vector<int> out;
  int last = -1;
  bool have_last = false;
  for (int g : seq) {
    if (have_last && g == last) continue;
    last = g;
    have_last = true;
    if (g != blank) out.push_back(g);
  }
  return out;
}

std::vector<int> blank_fill(std::span<const int> aligned, int blank) {
  std::vector<int> out(aligned.begin(), aligned.end());
  size_t first = out.size(), last = out.size();
  for (size_t i = 0; i < out.size(); ++i) {
    if (out[i] != blank) {
      if (first == out.size()) first = i;
      last = i;
    }
  }
  if (first == out.size()) return out;  // all blank
  // leading blanks take the first grapheme; interior blanks extend the
  // previous run; blanks after the last grapheme stay blank
  for (size_t i = 0; i < first; ++i) out[i] = out[first];
  int carry = out[first];
  for (size_t i = first; i <= last; ++i) {
    if (out[i] == blank) {
      out[i] = carry;
    } else {
      carry = out[i];
    }
  }
  return out;
}

std::vector<int> upsample(std::span<const int> seq, int64_t target_len) {
  const int64_t m = static_cast<int64_t>(seq.size());
  if (m < 1) throw std::invalid_argument("upsample: empty sequence");
  if (target_len < m) throw std::invalid_argument("upsample: downsampling unsupported");
  std::vector<int> out(static_cast<size_t>(target_len));
  for (int64_t j = 0; j < target_len; ++j) {
    out[static_cast<size_t>(j)] = seq[static_cast<size_t>(j * m / target_len)];
  }
  return out;
}

bool GuidingSet::contains(int id) const {
  return std::binary_search(tokens.begin(), tokens.end(), id);
}

GuidingSet best_prefix_cer(std::span<const int> decoded_collapsed,
                           std::span<const int> transcript, int eos_id) {
  const size_t m = decoded_collapsed.size();
  const size_t n = transcript.size();
  if (n == 0) throw std::invalid_argument("best_prefix_cer: empty transcript");

  // One DP sweep: dist[j] = edit distance between the full decoded string
  // and transcript[:j], for every j.
  std::vector<int64_t> prev(n + 1), cur(n + 1);
  for (size_t j = 0; j <= n; ++j) prev[j] = static_cast<int64_t>(j);
  for (size_t i = 1; i <= m; ++i) {
    cur[0] = static_cast<int64_t>(i);
    for (size_t j = 1; j <= n; ++j) {
      const int64_t sub =
          prev[j - 1] + (decoded_collapsed[i - 1] == transcript[j - 1] ? 0 : 1);
      cur[j] = std::min(sub, std::min(prev[j], cur[j - 1]) + 1);
    }
    std::swap(prev, cur);
  }

  GuidingSet out;
  out.s_cer = std::numeric_limits<double>::infinity();
  std::vector<double> cer_at(n + 1);
  for (size_t j = 0; j <= n; ++j) {
    cer_at[j] = static_cast<double>(prev[j]) / std::max<double>(1.0, static_cast<double>(j));
    out.s_cer = std::min(out.s_cer, cer_at[j]);
  }
  for (size_t j = 0; j <= n; ++j) {
    if (cer_at[j] != out.s_cer) continue;
    if (j >= 1) out.tokens.push_back(transcript[j - 1]);  // staying
    if (j < n) {
      out.tokens.push_back(transcript[j]);  // moving forward
    } else if (eos_id >= 0) {
      out.tokens.push_back(eos_id);
    }
  }
  std::sort(out.tokens.begin(), out.tokens.end());
  out.tokens.erase(std::unique(out.tokens.begin(), out.tokens.end()), out.tokens.end());
  return out;
}

namespace {
int sample_from(std::span<const int> ids, std::span<const double> weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (total <= 0.0) {
    // degenerate distribution: fall back to uniform over candidates
    std::uniform_int_distribution<size_t> pick(0, ids.size() - 1);
    return ids[pick(rng)];
  }
  const double u = unit(rng) * total;
  double acc = 0.0;
  for (size_t i = 0; i < ids.size(); ++i) {
    acc += weights[i];
    if (u < acc) return ids[i];
  }
  return ids.back();
}
}  // namespace

GuidedDistribution guided_distribution(std::span<const double> p, const GuidingSet& guiding,
                                       double lambda, int top_k) {
  if (top_k < 1) throw std::invalid_argument("guided_sample: top_k must be >= 1");
  if (lambda < 0.0) throw std::invalid_argument("guided_sample: negative lambda");

  GuidedDistribution dist;
  if (std::isinf(lambda)) {
    // hard guidance: restrict to the guiding set
    if (guiding.tokens.empty()) throw std::runtime_error("guided_sample: empty candidate set");
    dist.ids = guiding.tokens;
    for (int id : dist.ids) dist.probs.push_back(p[static_cast<size_t>(id)]);
  } else {
    // top-k of p, excluding guiding members
    std::vector<int> order(p.size());
    std::iota(order.begin(), order.end(), 0);
    const size_t k = std::min<size_t>(static_cast<size_t>(top_k), p.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<ptrdiff_t>(k), order.end(),
                      [&](int a, int b) {
                        if (p[static_cast<size_t>(a)] != p[static_cast<size_t>(b)]) {
                          return p[static_cast<size_t>(a)] > p[static_cast<size_t>(b)];
                        }
                        return a < b;
                      });
    dist.ids = guiding.tokens;
    for (size_t i = 0; i < k; ++i) {
      if (!guiding.contains(order[i])) dist.ids.push_back(order[i]);
    }
    if (dist.ids.empty()) throw std::runtime_error("guided_sample: empty candidate set");
    for (int id : dist.ids) {
      const double base = p[static_cast<size_t>(id)];
      dist.probs.push_back(guiding.contains(id) ? base * (1.0 + lambda) : base);
    }
  }
  double total = 0.0;
  for (double w : dist.probs) total += w;
  if (total > 0.0) {
    for (double& w : dist.probs) w /= total;
  } else {
    for (double& w : dist.probs) w = 1.0 / static_cast<double>(dist.probs.size());
  }
  return dist;
}

int guided_sample(std::span<const double> p, const GuidingSet& guiding, double lambda,
                  int top_k, Rng& rng) {
  const GuidedDistribution dist = guided_distribution(p, guiding, lambda, top_k);
  return sample_from(dist.ids, dist.probs, rng);
}

size_t n_time_select(std::span<const GenCandidate> candidates, SelectionCriterion criterion,
                     std::span<const int> transcript, int blank) {
  if (candidates.empty()) throw std::invalid_argument("n_time_select: no candidates");
  size_t best = 0;
  if (criterion == SelectionCriterion::kProbability) {
    for (size_t i = 1; i < candidates.size(); ++i) {
      if (candidates[i].grapheme_logprob > candidates[best].grapheme_logprob) best = i;
    }
    return best;
  }
  double best_cer = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < candidates.size(); ++i) {
    const std::vector<int> hyp = ctc_decode(candidates[i].graphemes, blank);
    const double c = transcript.empty()
                         ? static_cast<double>(hyp.size())
                         : cer(std::span<const int>(hyp), transcript);
    if (c < best_cer ||
        (c == best_cer &&
         candidates[i].grapheme_logprob > candidates[best].grapheme_logprob)) {
      best_cer = c;
      best = i;
    }
  }
  return best;
}

void GuidanceTracker::reset() {
  transcript_.clear();
  decoded_.clear();
  last_raw_ = -1;
  ends_stream_ = false;
}

void GuidanceTracker::set_transcript(std::vector<int> graphemes, bool ends_stream) {
  transcript_ = std::move(graphemes);
  ends_stream_ = ends_stream;
}

void GuidanceTracker::append_transcript(std::span<const int> graphemes, bool ends_stream) {
  transcript_.insert(transcript_.end(), graphemes.begin(), graphemes.end());
  ends_stream_ = ends_stream;
}

void GuidanceTracker::drop_transcript_prefix(int64_t n) {
  n = std::min<int64_t>(n, static_cast<int64_t>(transcript_.size()));
  if (n <= 0) return;
  std::span<const int> dropped(transcript_.data(), static_cast<size_t>(n));
  // Consume the decoded prefix that aligns best with the dropped text;
  // ties prefer the longest prefix. row[i] ends as edit(dropped, decoded[:i]).
  const size_t m = decoded_.size();
  std::vector<int64_t> row(m + 1), cur(m + 1);
  for (size_t i = 0; i <= m; ++i) row[i] = static_cast<int64_t>(i);
  for (size_t j = 1; j <= dropped.size(); ++j) {
    cur[0] = static_cast<int64_t>(j);
    for (size_t i = 1; i <= m; ++i) {
      const int64_t sub = row[i - 1] + (decoded_[i - 1] == dropped[j - 1] ? 0 : 1);
      cur[i] = std::min(sub, std::min(row[i], cur[i - 1]) + 1);
    }
    std::swap(row, cur);
  }
  size_t best_i = 0;
  int64_t best_d = std::numeric_limits<int64_t>::max();
  for (size_t i = 0; i <= m; ++i) {
    if (row[i] <= best_d) {
      best_d = row[i];
      best_i = i;
    }
  }
  decoded_.erase(decoded_.begin(), decoded_.begin() + static_cast<ptrdiff_t>(best_i));
  transcript_.erase(transcript_.begin(), transcript_.begin() + static_cast<ptrdiff_t>(n));
}

void GuidanceTracker::push_decoded(int grapheme) {
  if (last_raw_ == grapheme) return;  // run collapse
  last_raw_ = grapheme;
  if (grapheme != blank_) decoded_.push_back(grapheme);
}

GuidingSet GuidanceTracker::current_guiding() const {
  if (transcript_.empty()) {
    GuidingSet s;
    if (ends_stream_) s.tokens.push_back(eos_id_);
    return s;
  }
  return best_prefix_cer(decoded_, transcript_, ends_stream_ ? eos_id_ : -1);
}

}  // namespace streamdec
