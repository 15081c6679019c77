#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "streamdec/tensor.hpp"

namespace streamdec {

struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

struct NamedTensorRef {
  std::string name;
  Tensor* value = nullptr;
  Tensor* grad = nullptr;
};

// Reverse-mode tape. Nodes are whole tensors; heavy ops (attention, the SSM
// scan) register fused backward closures instead of elementwise graphs.
// A Graph lives for one training step: build loss, call backward(), drop it.
class Graph {
 public:
  explicit Graph(bool check_finite = false) : check_finite_(check_finite) {}

  // Leaf whose gradient accumulates into *grad_sink (not zeroed here).
  Var leaf(const Tensor& value, Tensor* grad_sink);
  // Constant input; owns a copy.
  Var constant(Tensor value);
  // Constant input borrowed from the caller; must outlive the graph.
  Var constant_ref(const Tensor& value);

  const Tensor& value(Var v) const;
  // Gradient buffer for a node (allocated zero on first use). For leaves
  // this is the external sink.
  Tensor& grad(Var v);
  bool needs_grad(Var v) const;

  // Generic fused op. `backward(g, gout)` must accumulate into parents'
  // grad buffers; it is skipped when no parent needs gradients.
  Var custom(const char* name, Tensor value, std::vector<Var> parents,
             std::function<void(Graph&, const Tensor&)> backward);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  // x[m,in] * w[out,in]^T (+ b[out]) -> [m,out]
  Var linear(Var x, Var w, Var b);
  Var linear_nobias(Var x, Var w) { return linear(x, w, Var{}); }
  Var embed_rows(Var table, std::vector<int> ids);
  Var concat_rows(Var a, Var b);
  Var slice_rows(Var a, int64_t begin, int64_t end);
  Var silu(Var a);
  Var rmsnorm(Var x, Var gain);
  // x[m,n] + b[n] broadcast over rows
  Var add_row_bias(Var x, Var b);

  // Multi-head attention. q[nq,dk], k/v[nk,dk], dk = heads * head_dim.
  // mask (optional, borrowed) is [nq,nk] with 1 = visible; fully masked
  // query rows throw. Returns [nq,dk] head-concatenated context (no output
  // projection).
  Var mha(Var q, Var k, Var v, int heads, const Tensor* mask);

  // Like mha but with two query matrices under one softmax: keys before
  // `split` are scored with q_a, the rest with q_b. Used for cross
  // attention where the enrollment block ignores positions while text
  // keys/queries are rotary-encoded.
  Var mha_split(Var q_a, Var q_b, Var k, Var v, int heads, int64_t split,
                const Tensor* mask);

  // Sum of w[t] * cross_entropy(logits[t,:], targets[t]) over rows.
  Var softmax_xent_rows(Var logits, std::vector<int> targets, std::vector<double> row_weights);

  Var sum_scalars(std::span<const Var> xs, double scale = 1.0);

  // Runs reverse pass from scalar `loss`. Leaf sinks receive += grads.
  void backward(Var loss);

  size_t num_nodes() const { return nodes_.size(); }
  bool finite_checks() const { return check_finite_; }

 private:
  struct Node {
    Tensor owned;
    const Tensor* value = nullptr;  // &owned or an external tensor
    Tensor grad_buf;
    Tensor* grad_sink = nullptr;
    bool self_owned = false;
    bool needs_grad = false;
    bool grad_alloc = false;
    std::function<void(Graph&, const Tensor&)> backward;
    const char* name = "";
  };

  Var push(Node n, const char* name);
  bool any_parent_needs(const std::vector<Var>& parents) const;

  // deque: node references stay valid as the tape grows
  std::deque<Node> nodes_;
  bool check_finite_ = false;
};

// Compares reverse-mode gradients against central finite differences.
// `loss_fn` evaluates the loss at the current parameter values; `grad_fn`
// must fill param grads (caller zeroes them inside). When
// max_coords_per_tensor > 0, a deterministic subsample of coordinates per
// tensor is checked. Relative error uses max(1, |fd|) as denominator.
struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  int64_t coords_checked = 0;
};

GradCheckReport grad_check(const std::function<double()>& loss_fn,
                           const std::function<void()>& grad_fn,
                           std::span<NamedTensorRef> params, double epsilon,
                           int max_coords_per_tensor, uint64_t seed);

}  // namespace streamdec
