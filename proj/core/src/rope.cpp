#include "streamdec/rope.hpp"

#include <cmath>
#include <stdexcept>

namespace streamdec {

RopeConfig::RopeConfig(int hd, double b) : head_dim(hd), base(b) {
  if (head_dim <= 0 || head_dim % 2 != 0) {
    throw std::invalid_argument("RopeConfig: head_dim must be positive and even");
  }
  inv_freq.resize(static_cast<size_t>(head_dim / 2));
  for (int j = 0; j < head_dim / 2; ++j) {
    inv_freq[static_cast<size_t>(j)] =
        std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(head_dim));
  }
}

void rope_rotate_inplace(std::span<double> x, int64_t pos, const RopeConfig& cfg) {
  if (static_cast<int>(x.size()) != cfg.head_dim) {
    throw std::invalid_argument("rope_rotate: vector size != head_dim");
  }
  const double p = static_cast<double>(pos);
  for (int j = 0; j < cfg.head_dim / 2; ++j) {
    const double ang = p * cfg.inv_freq[static_cast<size_t>(j)];
    const double c = std::cos(ang), s = std::sin(ang);
    const double x0 = x[static_cast<size_t>(2 * j)];
    const double x1 = x[static_cast<size_t>(2 * j + 1)];
    x[static_cast<size_t>(2 * j)] = x0 * c - x1 * s;
    x[static_cast<size_t>(2 * j + 1)] = x0 * s + x1 * c;
  }
}

std::vector<double> rope_rotate(std::span<const double> x, int64_t pos,
                                const RopeConfig& cfg) {
  std::vector<double> out(x.begin(), x.end());
  rope_rotate_inplace(out, pos, cfg);
  return out;
}

void rope_rotate_heads_inplace(std::span<double> x, int64_t pos, int heads,
                               const RopeConfig& cfg) {
  const size_t hd = static_cast<size_t>(cfg.head_dim);
  for (int h = 0; h < heads; ++h) {
    rope_rotate_inplace(x.subspan(static_cast<size_t>(h) * hd, hd), pos, cfg);
  }
}

Var rope_rows_train(Graph& g, Var x, std::vector<int64_t> positions, int heads,
                    const RopeConfig& cfg) {
  const Tensor& tx = g.value(x);
  const int64_t rows = tx.dim(0);
  if (static_cast<int64_t>(positions.size()) != rows) {
    throw std::invalid_argument("rope_rows_train: positions length mismatch");
  }
  if (tx.dim(1) != static_cast<int64_t>(heads) * cfg.head_dim) {
    throw std::invalid_argument("rope_rows_train: width != heads*head_dim");
  }
  Tensor out = tx;
  for (int64_t i = 0; i < rows; ++i) {
    rope_rotate_heads_inplace(out.row(i), positions[static_cast<size_t>(i)], heads, cfg);
  }
  return g.custom("rope_rows", std::move(out), {x},
                  [x, positions = std::move(positions), heads, cfg](Graph& g2,
                                                                    const Tensor& go) {
                    if (!g2.needs_grad(x)) return;
                    Tensor& gx = g2.grad(x);
                    Tensor rot = go;
                    // rotation is orthogonal: transpose = rotate by -pos
                    for (int64_t i = 0; i < go.dim(0); ++i) {
                      rope_rotate_heads_inplace(rot.row(i),
                                                -positions[static_cast<size_t>(i)], heads,
                                                cfg);
                      axpy(1.0, rot.row(i), gx.row(i));
                    }
                  });
}

}  // namespace streamdec
