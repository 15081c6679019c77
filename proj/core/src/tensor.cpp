#include "streamdec/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace streamdec {

Tensor::Tensor(std::vector<int64_t> dims)
    : shape(std::move(dims)), data(static_cast<size_t>(shape_numel(shape)), 0.0) {}

Tensor::Tensor(std::vector<int64_t> dims, double fill_value)
    : shape(std::move(dims)), data(static_cast<size_t>(shape_numel(shape)), fill_value) {}

int64_t shape_numel(const std::vector<int64_t>& dims) {
  int64_t n = 1;
  for (int64_t d : dims) {
    if (d < 0) throw std::invalid_argument("negative tensor dimension");
    n *= d;
  }
  return n;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

std::string shape_str(const std::vector<int64_t>& dims) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
  os << "]";
  return os.str();
}

std::span<double> Tensor::row(int64_t i) {
  const int64_t w = shape.back();
  return {data.data() + i * w, static_cast<size_t>(w)};
}

std::span<const double> Tensor::row(int64_t i) const {
  const int64_t w = shape.back();
  return {data.data() + i * w, static_cast<size_t>(w)};
}

void Tensor::fill(double v) { std::fill(data.begin(), data.end(), v); }

Tensor Tensor::randn(std::vector<int64_t> dims, double stddev, Rng& rng) {
  Tensor t(std::move(dims));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data) v = dist(rng);
  return t;
}

Tensor Tensor::from(std::initializer_list<double> vals) {
  Tensor t({static_cast<int64_t>(vals.size())});
  std::copy(vals.begin(), vals.end(), t.data.begin());
  return t;
}

bool all_finite(std::span<const double> xs) {
  for (double v : xs) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void check_finite(const Tensor& t, const char* where) {
  if (!all_finite(t.data)) {
    throw std::runtime_error(std::string("non-finite value in ") + where);
  }
}

void matmul_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k || c.dim(0) != m || c.dim(1) != n) {
    throw std::invalid_argument("matmul_acc shape mismatch: " + shape_str(a.shape) + " x " +
                                shape_str(b.shape) + " -> " + shape_str(c.shape));
  }
  // saxpy order: inner loop streams rows of b and c.
  for (int64_t i = 0; i < m; ++i) {
    const double* ai = a.data.data() + i * k;
    double* ci = c.data.data() + i * n;
    for (int64_t l = 0; l < k; ++l) {
      const double av = ai[l];
      if (av == 0.0) continue;
      const double* bl = b.data.data() + l * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += av * bl[j];
    }
  }
}

void matmul_bt_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const int64_t m = a.dim(0), n = a.dim(1), k = b.dim(0);
  if (b.dim(1) != n || c.dim(0) != m || c.dim(1) != k) {
    throw std::invalid_argument("matmul_bt_acc shape mismatch");
  }
  for (int64_t i = 0; i < m; ++i) {
    const double* ai = a.data.data() + i * n;
    double* ci = c.data.data() + i * k;
    for (int64_t l = 0; l < k; ++l) {
      const double* bl = b.data.data() + l * n;
      double s = 0.0;
#pragma omp simd reduction(+ : s)
      for (int64_t j = 0; j < n; ++j) s += ai[j] * bl[j];
      ci[l] += s;
    }
  }
}

void matmul_at_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != m || c.dim(0) != k || c.dim(1) != n) {
    throw std::invalid_argument("matmul_at_acc shape mismatch");
  }
  for (int64_t i = 0; i < m; ++i) {
    const double* ai = a.data.data() + i * k;
    const double* bi = b.data.data() + i * n;
    for (int64_t l = 0; l < k; ++l) {
      const double av = ai[l];
      if (av == 0.0) continue;
      double* cl = c.data.data() + l * n;
      for (int64_t j = 0; j < n; ++j) cl[j] += av * bi[j];
    }
  }
}

void linear_row(std::span<const double> x, const Tensor& w, const Tensor& b,
                std::span<double> y) {
  const int64_t out = w.dim(0), in = w.dim(1);
  if (static_cast<int64_t>(x.size()) != in || static_cast<int64_t>(y.size()) != out) {
    throw std::invalid_argument("linear_row shape mismatch");
  }
  const double* xp = x.data();
  for (int64_t o = 0; o < out; ++o) {
    const double* wo = w.data.data() + o * in;
    double s = 0.0;
#pragma omp simd reduction(+ : s)
    for (int64_t j = 0; j < in; ++j) s += wo[j] * xp[j];
    y[static_cast<size_t>(o)] = s + (b.data.empty() ? 0.0 : b.data[static_cast<size_t>(o)]);
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  const double* ap = a.data();
  const double* bp = b.data();
  const size_t n = a.size();
#pragma omp simd reduction(+ : s)
  for (size_t i = 0; i < n; ++i) s += ap[i] * bp[i];
  return s;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void softmax_inplace(std::span<double> xs) {
  if (xs.empty()) throw std::invalid_argument("softmax of empty vector");
  double mx = xs[0];
  for (double v : xs) mx = std::max(mx, v);
  double sum = 0.0;
  for (double& v : xs) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : xs) v /= sum;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  softmax_inplace(out);
  return out;
}

double cross_entropy(std::span<const double> logits, int64_t target) {
  if (target < 0 || target >= static_cast<int64_t>(logits.size())) {
    throw std::out_of_range("cross_entropy target out of range");
  }
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  return std::log(sum) - (logits[static_cast<size_t>(target)] - mx);
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double silu(double x) { return x * sigmoid(x); }

}  // namespace streamdec
