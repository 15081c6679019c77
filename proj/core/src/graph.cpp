#include "streamdec/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace streamdec {

Var Graph::push(Node n, const char* name) {
  n.name = name;
  nodes_.push_back(std::move(n));
  Node& placed = nodes_.back();
  if (placed.self_owned) placed.value = &placed.owned;
  if (check_finite_ && placed.value != nullptr) check_finite(*placed.value, name);
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Var Graph::leaf(const Tensor& value, Tensor* grad_sink) {
  Node n;
  n.value = &value;
  n.grad_sink = grad_sink;
  n.needs_grad = grad_sink != nullptr;
  return push(std::move(n), "leaf");
}

Var Graph::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  n.self_owned = true;
  return push(std::move(n), "constant");
}

Var Graph::constant_ref(const Tensor& value) {
  Node n;
  n.value = &value;
  return push(std::move(n), "constant_ref");
}

const Tensor& Graph::value(Var v) const {
  return *nodes_[static_cast<size_t>(v.id)].value;
}

Tensor& Graph::grad(Var v) {
  Node& n = nodes_[static_cast<size_t>(v.id)];
  if (n.grad_sink != nullptr) {
    if (n.grad_sink->shape != n.value->shape) {
      throw std::invalid_argument("grad sink shape mismatch for leaf");
    }
    return *n.grad_sink;
  }
  if (!n.grad_alloc) {
    n.grad_buf = Tensor(n.value->shape);
    n.grad_alloc = true;
  }
  return n.grad_buf;
}

bool Graph::needs_grad(Var v) const {
  return v.valid() && nodes_[static_cast<size_t>(v.id)].needs_grad;
}

bool Graph::any_parent_needs(const std::vector<Var>& parents) const {
  return std::any_of(parents.begin(), parents.end(),
                     [&](Var p) { return needs_grad(p); });
}

Var Graph::custom(const char* name, Tensor value, std::vector<Var> parents,
                  std::function<void(Graph&, const Tensor&)> backward) {
  Node n;
  n.owned = std::move(value);
  n.self_owned = true;
  if (any_parent_needs(parents)) {
    n.needs_grad = true;
    n.backward = std::move(backward);
  }
  return push(std::move(n), name);
}

Var Graph::add(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!same_shape(ta, tb)) throw std::invalid_argument("add shape mismatch");
  Tensor out = ta;
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) += tb.at(i);
  return custom("add", std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    if (g.needs_grad(a)) axpy(1.0, go.data, g.grad(a).data);
    if (g.needs_grad(b)) axpy(1.0, go.data, g.grad(b).data);
  });
}

Var Graph::sub(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!same_shape(ta, tb)) throw std::invalid_argument("sub shape mismatch");
  Tensor out = ta;
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) -= tb.at(i);
  return custom("sub", std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    if (g.needs_grad(a)) axpy(1.0, go.data, g.grad(a).data);
    if (g.needs_grad(b)) axpy(-1.0, go.data, g.grad(b).data);
  });
}

Var Graph::mul(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!same_shape(ta, tb)) throw std::invalid_argument("mul shape mismatch");
  Tensor out = ta;
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) *= tb.at(i);
  return custom("mul", std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    const Tensor& va = g.value(a);
    const Tensor& vb = g.value(b);
    if (g.needs_grad(a)) {
      Tensor& ga = g.grad(a);
      for (int64_t i = 0; i < go.numel(); ++i) ga.at(i) += go.at(i) * vb.at(i);
    }
    if (g.needs_grad(b)) {
      Tensor& gb = g.grad(b);
      for (int64_t i = 0; i < go.numel(); ++i) gb.at(i) += go.at(i) * va.at(i);
    }
  });
}

Var Graph::scale(Var a, double c) {
  Tensor out = value(a);
  for (double& v : out.data) v *= c;
  return custom("scale", std::move(out), {a}, [a, c](Graph& g, const Tensor& go) {
    if (g.needs_grad(a)) axpy(c, go.data, g.grad(a).data);
  });
}

Var Graph::linear(Var x, Var w, Var b) {
  const Tensor& tx = value(x);
  const Tensor& tw = value(w);
  const int64_t m = tx.dim(0), in = tx.dim(1), out_dim = tw.dim(0);
  if (tw.dim(1) != in) throw std::invalid_argument("linear: w/x shape mismatch");
  Tensor out({m, out_dim});
  matmul_bt_acc(tx, tw, out);
  std::vector<Var> parents{x, w};
  if (b.valid()) {
    const Tensor& tb = value(b);
    if (tb.numel() != out_dim) throw std::invalid_argument("linear: bias shape mismatch");
    for (int64_t i = 0; i < m; ++i) {
      double* oi = out.data.data() + i * out_dim;
      for (int64_t j = 0; j < out_dim; ++j) oi[j] += tb.at(j);
    }
    parents.push_back(b);
  }
  return custom("linear", std::move(out), std::move(parents),
                [x, w, b](Graph& g, const Tensor& go) {
                  const Tensor& vx = g.value(x);
                  const Tensor& vw = g.value(w);
                  if (g.needs_grad(x)) matmul_acc(go, vw, g.grad(x));
                  if (g.needs_grad(w)) matmul_at_acc(go, vx, g.grad(w));
                  if (b.valid() && g.needs_grad(b)) {
                    Tensor& gb = g.grad(b);
                    const int64_t m2 = go.dim(0), o2 = go.dim(1);
                    for (int64_t i = 0; i < m2; ++i) {
                      const double* gi = go.data.data() + i * o2;
                      for (int64_t j = 0; j < o2; ++j) gb.at(j) += gi[j];
                    }
                  }
                });
}

Var Graph::embed_rows(Var table, std::vector<int> ids) {
  const Tensor& tt = value(table);
  const int64_t d = tt.dim(1);
  const int64_t rows = tt.dim(0);
  Tensor out({static_cast<int64_t>(ids.size()), d});
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= rows) throw std::out_of_range("embed_rows id out of range");
    std::copy_n(tt.data.data() + static_cast<int64_t>(ids[i]) * d, d,
                out.data.data() + static_cast<int64_t>(i) * d);
  }
  return custom("embed_rows", std::move(out), {table},
                [table, ids = std::move(ids)](Graph& g, const Tensor& go) {
                  if (!g.needs_grad(table)) return;
                  Tensor& gt = g.grad(table);
                  const int64_t d2 = gt.dim(1);
                  for (size_t i = 0; i < ids.size(); ++i) {
                    axpy(1.0, go.row(static_cast<int64_t>(i)),
                         std::span<double>(gt.data.data() + ids[i] * d2, static_cast<size_t>(d2)));
                  }
                });
}

Var Graph::concat_rows(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (ta.dim(1) != tb.dim(1)) throw std::invalid_argument("concat_rows width mismatch");
  Tensor out({ta.dim(0) + tb.dim(0), ta.dim(1)});
  std::copy(ta.data.begin(), ta.data.end(), out.data.begin());
  std::copy(tb.data.begin(), tb.data.end(), out.data.begin() + ta.numel());
  return custom("concat_rows", std::move(out), {a, b},
                [a, b](Graph& g, const Tensor& go) {
                  const int64_t na = g.value(a).numel();
                  if (g.needs_grad(a)) {
                    axpy(1.0, std::span<const double>(go.data.data(), static_cast<size_t>(na)),
                         g.grad(a).data);
                  }
                  if (g.needs_grad(b)) {
                    axpy(1.0,
                         std::span<const double>(go.data.data() + na,
                                                 go.data.size() - static_cast<size_t>(na)),
                         g.grad(b).data);
                  }
                });
}

Var Graph::slice_rows(Var a, int64_t begin, int64_t end) {
  const Tensor& ta = value(a);
  const int64_t d = ta.dim(1);
  if (begin < 0 || end > ta.dim(0) || begin > end) {
    throw std::out_of_range("slice_rows range");
  }
  Tensor out({end - begin, d});
  std::copy_n(ta.data.data() + begin * d, (end - begin) * d, out.data.data());
  return custom("slice_rows", std::move(out), {a},
                [a, begin, d](Graph& g, const Tensor& go) {
                  if (!g.needs_grad(a)) return;
                  Tensor& ga = g.grad(a);
                  axpy(1.0, go.data,
                       std::span<double>(ga.data.data() + begin * d, go.data.size()));
                });
}

Var Graph::silu(Var a) {
  const Tensor& ta = value(a);
  Tensor out = ta;
  for (double& v : out.data) v = streamdec::silu(v);
  return custom("silu", std::move(out), {a}, [a](Graph& g, const Tensor& go) {
    if (!g.needs_grad(a)) return;
    const Tensor& va = g.value(a);
    Tensor& ga = g.grad(a);
    for (int64_t i = 0; i < go.numel(); ++i) {
      const double s = sigmoid(va.at(i));
      ga.at(i) += go.at(i) * s * (1.0 + va.at(i) * (1.0 - s));
    }
  });
}

Var Graph::rmsnorm(Var x, Var gain) {
  constexpr double kEps = 1e-6;
  const Tensor& tx = value(x);
  const Tensor& tg = value(gain);
  const int64_t m = tx.dim(0), d = tx.dim(1);
  if (tg.numel() != d) throw std::invalid_argument("rmsnorm gain shape");
  Tensor out({m, d});
  Tensor inv_rms({m});
  for (int64_t i = 0; i < m; ++i) {
    double ss = 0.0;
    const double* xi = tx.data.data() + i * d;
    for (int64_t j = 0; j < d; ++j) ss += xi[j] * xi[j];
    const double r = 1.0 / std::sqrt(ss / static_cast<double>(d) + kEps);
    inv_rms.at(i) = r;
    double* oi = out.data.data() + i * d;
    for (int64_t j = 0; j < d; ++j) oi[j] = xi[j] * r * tg.at(j);
  }
  return custom(
      "rmsnorm", std::move(out), {x, gain},
      [x, gain, inv_rms = std::move(inv_rms)](Graph& g, const Tensor& go) {
        const Tensor& vx = g.value(x);
        const Tensor& vg = g.value(gain);
        const int64_t m2 = vx.dim(0), d2 = vx.dim(1);
        for (int64_t i = 0; i < m2; ++i) {
          const double r = inv_rms.at(i);
          const double* xi = vx.data.data() + i * d2;
          const double* gi = go.data.data() + i * d2;
          if (g.needs_grad(gain)) {
            Tensor& gg = g.grad(gain);
            for (int64_t j = 0; j < d2; ++j) gg.at(j) += gi[j] * xi[j] * r;
          }
          if (g.needs_grad(x)) {
            double inner = 0.0;
            for (int64_t j = 0; j < d2; ++j) inner += gi[j] * vg.at(j) * xi[j];
            const double c = inner * r * r * r / static_cast<double>(d2);
            Tensor& gx = g.grad(x);
            double* gxi = gx.data.data() + i * d2;
            for (int64_t j = 0; j < d2; ++j) gxi[j] += gi[j] * vg.at(j) * r - c * xi[j];
          }
        }
      });
}

Var Graph::add_row_bias(Var x, Var b) {
  const Tensor& tx = value(x);
  const Tensor& tb = value(b);
  const int64_t m = tx.dim(0), n = tx.dim(1);
  if (tb.numel() != n) throw std::invalid_argument("add_row_bias shape mismatch");
  Tensor out = tx;
  for (int64_t i = 0; i < m; ++i) {
    double* oi = out.data.data() + i * n;
    for (int64_t j = 0; j < n; ++j) oi[j] += tb.at(j);
  }
  return custom("add_row_bias", std::move(out), {x, b}, [x, b](Graph& g, const Tensor& go) {
    if (g.needs_grad(x)) axpy(1.0, go.data, g.grad(x).data);
    if (g.needs_grad(b)) {
      Tensor& gb = g.grad(b);
      const int64_t m2 = go.dim(0), n2 = go.dim(1);
      for (int64_t i = 0; i < m2; ++i) {
        const double* gi = go.data.data() + i * n2;
        for (int64_t j = 0; j < n2; ++j) gb.at(j) += gi[j];
      }
    }
  });
}

Var Graph::mha(Var q, Var k, Var v, int heads, const Tensor* mask) {
  return mha_split(q, q, k, v, heads, 0, mask);
}

Var Graph::mha_split(Var q_a, Var q_b, Var k, Var v, int heads, int64_t split,
                     const Tensor* mask) {
  const Tensor& tqa = value(q_a);
  const Tensor& tqb = value(q_b);
  const Tensor& tk = value(k);
  const Tensor& tv = value(v);
  const int64_t nq = tqa.dim(0), dk = tqa.dim(1), nk = tk.dim(0);
  if (!same_shape(tqa, tqb) || tk.dim(1) != dk || tv.dim(1) != dk || tv.dim(0) != nk) {
    throw std::invalid_argument("mha shape mismatch");
  }
  if (dk % heads != 0) throw std::invalid_argument("mha: dk not divisible by heads");
  if (split < 0 || split > nk) throw std::invalid_argument("mha: bad split");
  if (mask != nullptr && (mask->dim(0) != nq || mask->dim(1) != nk)) {
    throw std::invalid_argument("mha mask shape mismatch");
  }
  const int64_t hd = dk / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  // weights cached per head for backward: [heads, nq, nk]
  Tensor weights({heads, nq, nk});
  Tensor out({nq, dk});
  std::vector<double> row(static_cast<size_t>(nk));
  for (int h = 0; h < heads; ++h) {
    const int64_t off = h * hd;
    for (int64_t i = 0; i < nq; ++i) {
      const double* qai = tqa.data.data() + i * dk + off;
      const double* qbi = tqb.data.data() + i * dk + off;
      bool any = false;
      for (int64_t j = 0; j < nk; ++j) {
        if (mask != nullptr && mask->at(i, j) == 0.0) {
          row[static_cast<size_t>(j)] = -1e9;
          continue;
        }
        any = true;
        const double* qi = j < split ? qai : qbi;
        const double* kj = tk.data.data() + j * dk + off;
        double s = 0.0;
#pragma omp simd reduction(+ : s)
        for (int64_t c = 0; c < hd; ++c) s += qi[c] * kj[c];
        row[static_cast<size_t>(j)] = s * inv_sqrt;
      }
      if (mask != nullptr && !any) throw std::runtime_error("mha: query with all keys masked");
      softmax_inplace(row);
      double* wrow = weights.data.data() + (h * nq + i) * nk;
      std::copy(row.begin(), row.end(), wrow);
      double* oi = out.data.data() + i * dk + off;
      std::fill(oi, oi + hd, 0.0);
      for (int64_t j = 0; j < nk; ++j) {
        const double w = wrow[j];
        if (w == 0.0) continue;
        const double* vj = tv.data.data() + j * dk + off;
        for (int64_t c = 0; c < hd; ++c) oi[c] += w * vj[c];
      }
    }
  }
  return custom(
      "mha", std::move(out), {q_a, q_b, k, v},
      [q_a, q_b, k, v, heads, hd, nq, nk, dk, split, inv_sqrt,
       weights = std::move(weights)](Graph& g, const Tensor& go) {
        const Tensor& vqa = g.value(q_a);
        const Tensor& vqb = g.value(q_b);
        const Tensor& vk = g.value(k);
        const Tensor& vv = g.value(v);
        Tensor* gqa = g.needs_grad(q_a) ? &g.grad(q_a) : nullptr;
        Tensor* gqb = g.needs_grad(q_b) ? &g.grad(q_b) : nullptr;
        Tensor* gk = g.needs_grad(k) ? &g.grad(k) : nullptr;
        Tensor* gv = g.needs_grad(v) ? &g.grad(v) : nullptr;
        std::vector<double> dW(static_cast<size_t>(nk));
        for (int h = 0; h < heads; ++h) {
          const int64_t off = h * hd;
          for (int64_t i = 0; i < nq; ++i) {
            const double* wrow = weights.data.data() + (h * nq + i) * nk;
            const double* goi = go.data.data() + i * dk + off;
            // dW_j = <dCtx, V_j>, dS = W .* (dW - sum_j W_j dW_j)
            double inner = 0.0;
            for (int64_t j = 0; j < nk; ++j) {
              if (wrow[j] == 0.0) {
                dW[static_cast<size_t>(j)] = 0.0;
                continue;
              }
              const double* vj = vv.data.data() + j * dk + off;
              double s = 0.0;
#pragma omp simd reduction(+ : s)
              for (int64_t c = 0; c < hd; ++c) s += goi[c] * vj[c];
              dW[static_cast<size_t>(j)] = s;
              inner += wrow[j] * s;
              if (gv != nullptr) {
                double* gvj = gv->data.data() + j * dk + off;
                for (int64_t c = 0; c < hd; ++c) gvj[c] += wrow[j] * goi[c];
              }
            }
            if (gqa == nullptr && gqb == nullptr && gk == nullptr) continue;
            for (int64_t j = 0; j < nk; ++j) {
              const double w = wrow[j];
              if (w == 0.0) continue;
              const double ds = w * (dW[static_cast<size_t>(j)] - inner) * inv_sqrt;
              if (ds == 0.0) continue;
              const double* kj = vk.data.data() + j * dk + off;
              const double* qi = (j < split ? vqa : vqb).data.data() + i * dk + off;
              Tensor* gq = j < split ? gqa : gqb;
              if (gq != nullptr) {
                double* gqi = gq->data.data() + i * dk + off;
                for (int64_t c = 0; c < hd; ++c) gqi[c] += ds * kj[c];
              }
              if (gk != nullptr) {
                double* gkj = gk->data.data() + j * dk + off;
                for (int64_t c = 0; c < hd; ++c) gkj[c] += ds * qi[c];
              }
            }
          }
        }
      });
}

Var Graph::softmax_xent_rows(Var logits, std::vector<int> targets,
                             std::vector<double> row_weights) {
  const Tensor& tl = value(logits);
  const int64_t m = tl.dim(0), vsz = tl.dim(1);
  if (static_cast<int64_t>(targets.size()) != m ||
      static_cast<int64_t>(row_weights.size()) != m) {
    throw std::invalid_argument("softmax_xent_rows: targets/weights length mismatch");
  }
  Tensor probs({m, vsz});
  double total = 0.0;
  for (int64_t i = 0; i < m; ++i) {
    const double* li = tl.data.data() + i * vsz;
    double* pi = probs.data.data() + i * vsz;
    double mx = li[0];
    for (int64_t j = 1; j < vsz; ++j) mx = std::max(mx, li[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < vsz; ++j) {
      pi[j] = std::exp(li[j] - mx);
      sum += pi[j];
    }
    const double inv = 1.0 / sum;
    for (int64_t j = 0; j < vsz; ++j) pi[j] *= inv;
    if (row_weights[static_cast<size_t>(i)] == 0.0) continue;
    const int t = targets[static_cast<size_t>(i)];
    if (t < 0 || t >= vsz) throw std::out_of_range("softmax_xent_rows target");
    total += row_weights[static_cast<size_t>(i)] * (std::log(sum) - (li[t] - mx));
  }
  Tensor out({1});
  out.at(0) = total;
  return custom(
      "softmax_xent_rows", std::move(out), {logits},
      [logits, targets = std::move(targets), row_weights = std::move(row_weights),
       probs = std::move(probs)](Graph& g, const Tensor& go) {
        if (!g.needs_grad(logits)) return;
        Tensor& gl = g.grad(logits);
        const int64_t m2 = gl.dim(0), v2 = gl.dim(1);
        const double gs = go.at(0);
        for (int64_t i = 0; i < m2; ++i) {
          const double w = row_weights[static_cast<size_t>(i)] * gs;
          if (w == 0.0) continue;
          const double* pi = probs.data.data() + i * v2;
          double* gi = gl.data.data() + i * v2;
          for (int64_t j = 0; j < v2; ++j) gi[j] += w * pi[j];
          gi[targets[static_cast<size_t>(i)]] -= w;
        }
      });
}

Var Graph::sum_scalars(std::span<const Var> xs, double s) {
  Tensor out({1});
  for (Var x : xs) out.at(0) += value(x).at(0) * s;
  std::vector<Var> parents(xs.begin(), xs.end());
  return custom("sum_scalars", std::move(out), parents,
                [parents, s](Graph& g, const Tensor& go) {
                  for (Var p : parents) {
                    if (g.needs_grad(p)) g.grad(p).at(0) += go.at(0) * s;
                  }
                });
}

void Graph::backward(Var loss) {
  Node& ln = nodes_[static_cast<size_t>(loss.id)];
  if (ln.value->numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
  grad(loss).at(0) = 1.0;
  for (int32_t id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad || !n.backward) continue;
    if (!n.grad_alloc && n.grad_sink == nullptr) continue;  // never reached from loss
    n.backward(*this, grad(Var{id}));
  }
}

GradCheckReport grad_check(const std::function<double()>& loss_fn,
                           const std::function<void()>& grad_fn,
                           std::span<NamedTensorRef> params, double epsilon,
                           int max_coords_per_tensor, uint64_t seed) {
  if (epsilon <= 0.0) throw std::invalid_argument("grad_check: epsilon must be positive");
  grad_fn();
  std::vector<Tensor> ad_grads;
  ad_grads.reserve(params.size());
  for (auto& p : params) ad_grads.push_back(*p.grad);

  GradCheckReport rep;
  Rng rng(seed);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& val = *params[pi].value;
    const int64_t n = val.numel();
    std::vector<int64_t> coords;
    if (max_coords_per_tensor <= 0 || n <= max_coords_per_tensor) {
      coords.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    } else {
      std::uniform_int_distribution<int64_t> pick(0, n - 1);
      for (int i = 0; i < max_coords_per_tensor; ++i) coords.push_back(pick(rng));
    }
    for (int64_t c : coords) {
      const double orig = val.at(c);
      val.at(c) = orig + epsilon;
      const double f1 = loss_fn();
      val.at(c) = orig - epsilon;
      const double f2 = loss_fn();
      val.at(c) = orig;
      const double fd = (f1 - f2) / (2.0 * epsilon);
      const double ad = ad_grads[pi].at(c);
      const double rel = std::abs(ad - fd) / std::max(1.0, std::abs(fd));
      ++rep.coords_checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = params[pi].name;
        rep.worst_index = c;
      }
    }
  }
  return rep;
}

}  // namespace streamdec
