#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "streamdec/graph.hpp"

namespace streamdec {

enum class DecaySchedule { kConstant, kCosine };

struct OptimizerConfig {
  double peak_lr = 3e-4;
  int64_t warmup_steps = 500;
  DecaySchedule decay = DecaySchedule::kConstant;
  int64_t total_steps = 0;  // required for cosine
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with a linear warmup ramp: lr(0) = 0, lr(warmup_steps) = peak.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  double lr_at(int64_t step) const;
  int64_t step_count() const { return step_count_; }

  // Applies one update from the grads in `params`; grads are not zeroed.
  void step(std::span<NamedTensorRef> params);
  void zero_grads(std::span<NamedTensorRef> params);

  void save_state(std::ostream& os) const;
  void load_state(std::istream& is, std::span<NamedTensorRef> params);

 private:
  OptimizerConfig cfg_;
  int64_t step_count_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace streamdec
