#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "streamdec/tensor.hpp"

namespace streamdec {

// CTC collapse: merge consecutive repeats, then drop blanks.
std::vector<int> ctc_decode(std::span<const int> seq, int blank);

// Densify a sparse aligned stream: interior blanks extend the preceding
// grapheme run, leading blanks take the first grapheme, trailing blanks
// stay blank.
std::vector<int> blank_fill(std::span<const int> aligned, int blank);

// Nearest-index repetition to target_len (source index floor(j*m/target)).
// target_len below the input length throws.
std::vector<int> upsample(std::span<const int> seq, int64_t target_len);

// Tokens that keep the decoded stream at minimal prefix-CER against the
// transcript: for each argmin prefix, its last token (staying) and the one
// after it (moving forward; EOS past the end).
struct GuidingSet {
  std::vector<int> tokens;  // sorted, unique
  double s_cer = 0.0;

  bool contains(int id) const;
};

GuidingSet best_prefix_cer(std::span<const int> decoded_collapsed,
                           std::span<const int> transcript, int eos_id);

constexpr double kHardGuidance = std::numeric_limits<double>::infinity();

// Guided sampling: candidates are the guiding set plus the top-k ids
// outside it; guiding probabilities are scaled by (1+lambda) and the
// candidate block renormalized. lambda == inf restricts to the guiding set.
struct GuidedDistribution {
  std::vector<int> ids;
  std::vector<double> probs;  // normalized over ids
};
GuidedDistribution guided_distribution(std::span<const double> p, const GuidingSet& guiding,
                                       double lambda, int top_k);
int guided_sample(std::span<const double> p, const GuidingSet& guiding, double lambda,
                  int top_k, Rng& rng);

enum class SelectionCriterion { kCer, kProbability };

struct GenCandidate {
  std::vector<int> graphemes;  // raw emitted stream (with blanks/repeats)
  double grapheme_logprob = 0.0;
};

// Picks a candidate: lowest CER of the collapsed grapheme stream against
// the transcript (ties by higher log-prob), or highest log-prob.
size_t n_time_select(std::span<const GenCandidate> candidates, SelectionCriterion criterion,
                     std::span<const int> transcript, int blank);

// Per-session guidance bookkeeping. The decoded stream is kept in
// incrementally collapsed form; in streaming mode the transcript view
// follows the attention window and the matching decoded prefix is
// consumed when chunks fall out of it, keeping per-step cost bounded.
class GuidanceTracker {
 public:
  GuidanceTracker(int blank, int eos_id) : blank_(blank), eos_id_(eos_id) {}

  void reset();
  void set_transcript(std::vector<int> graphemes, bool ends_stream);
  void append_transcript(std::span<const int> graphemes, bool ends_stream);
  void set_ends_stream(bool v) { ends_stream_ = v; }
  // Drops the first n transcript graphemes and consumes the decoded prefix
  // that aligns best with them.
  void drop_transcript_prefix(int64_t n);

  void push_decoded(int grapheme);

  GuidingSet current_guiding() const;
  const std::vector<int>& transcript() const { return transcript_; }
  const std::vector<int>& decoded_collapsed() const { return decoded_; }
  bool ends_stream() const { return ends_stream_; }

 private:
  int blank_;
  int eos_id_;
  std::vector<int> transcript_;
  std::vector<int> decoded_;
  int last_raw_ = -1;
  bool ends_stream_ = false;
};

}  // namespace streamdec
