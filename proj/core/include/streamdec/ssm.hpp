#pragma once

#include <span>
#include <vector>

#include "streamdec/graph.hpp"
#include "streamdec/tensor.hpp"

namespace streamdec {

struct Param {
  Tensor value;
  mutable Tensor grad;  // scratch, written during backward
  void init(std::vector<int64_t> shape, double stddev, Rng& rng) {
    value = stddev == 0.0 ? Tensor::zeros(shape) : Tensor::randn(shape, stddev, rng);
    grad = Tensor::zeros(shape);
  }
};

// Zero-order-hold discretization of a scalar diagonal entry:
//   a_bar = exp(delta*a), b_bar = ((exp(delta*a) - 1) / a) * b
// with the series limit b_bar -> delta*b for |delta*a| below 1e-6.
struct Discretized {
  double a_bar;
  double b_bar;
};
Discretized discretize(double a, double b, double delta);
// Elementwise over a diagonal row; writes a_bar/b_bar.
void discretize(std::span<const double> a, std::span<const double> b, double delta,
                std::span<double> a_bar, std::span<double> b_bar);

// Selective state-space layer. A is diagonal per channel ([D,N], strictly
// negative via A = -exp(a_log)); delta/B/C are projections of the input.
struct SsmLayerParams {
  Param a_log;              // [D,N]
  Param w_delta, b_delta;   // [D,D], [D]
  Param w_b, b_b;           // [N,D], [N]
  Param w_c, b_c;           // [N,D], [N]
  Param skip;               // [D]

  int channels() const { return static_cast<int>(a_log.value.dim(0)); }
  int state_dim() const { return static_cast<int>(a_log.value.dim(1)); }
  void init(int d, int n, Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedTensorRef>& out);
};

struct SsmState {
  Tensor h;  // [D,N]
  int64_t step_index = 0;
  // scratch for the selective projections, sized on reset
  std::vector<double> delta, b_sel, c_sel;

  void reset(int d, int n);
};

// One recurrent step: selective delta/B/C from x_t, discretize, update h,
// y = C h + skip .* x. Cost independent of step_index.
void ssm_step(SsmState& state, std::span<const double> x_t, const SsmLayerParams& p,
              std::span<double> y_t);

// Full-sequence mode: iterates ssm_step from a zero state.
Tensor ssm_scan(const SsmLayerParams& p, const Tensor& x_seq);

// Training-mode scan on the tape; forward matches ssm_scan exactly.
struct SsmLayerVars {
  Var a_log, w_delta, b_delta, w_b, b_b, w_c, b_c, skip;
};
SsmLayerVars ssm_leaf_vars(Graph& g, SsmLayerParams& p);
Var ssm_scan_train(Graph& g, Var u, const SsmLayerVars& pv);

// Time-invariant single-channel instance (fixed delta/B/C, selectivity
// bypassed); used by tests against the convolution-kernel oracle.
struct LtiSsm {
  std::vector<double> a, b, c;  // [N] each, a < 0
  double delta = 1.0;

  double step(std::vector<double>& h, double x) const;
  std::vector<double> scan(std::span<const double> xs) const;
};

}  // namespace streamdec
