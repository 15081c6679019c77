#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace streamdec {

using Rng = std::mt19937_64;

// Dense row-major tensor of doubles. Unit tests run the same kernels the
// trainer uses, so everything stays fp64 end to end.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> dims);
  Tensor(std::vector<int64_t> dims, double fill);

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape.size()); }

  double& at(int64_t i) { return data[static_cast<size_t>(i)]; }
  double at(int64_t i) const { return data[static_cast<size_t>(i)]; }
  double& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
  double at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }

  std::span<double> row(int64_t i);
  std::span<const double> row(int64_t i) const;

  void fill(double v);
  void zero() { fill(0.0); }

  static Tensor zeros(std::vector<int64_t> dims) { return Tensor(std::move(dims), 0.0); }
  static Tensor randn(std::vector<int64_t> dims, double stddev, Rng& rng);
  static Tensor from(std::initializer_list<double> vals);
};

int64_t shape_numel(const std::vector<int64_t>& dims);
bool same_shape(const Tensor& a, const Tensor& b);
std::string shape_str(const std::vector<int64_t>& dims);

// Throws std::runtime_error naming `where` if any entry is NaN/Inf.
void check_finite(const Tensor& t, const char* where);
bool all_finite(std::span<const double> xs);

// ---- raw kernels (no autodiff) -------------------------------------------

// c[m,n] += a[m,k] * b[k,n]
void matmul_acc(const Tensor& a, const Tensor& b, Tensor& c);
// c[m,k] += a[m,n] * b[k,n]^T
void matmul_bt_acc(const Tensor& a, const Tensor& b, Tensor& c);
// c[k,n] += a[m,k]^T * b[m,n]
void matmul_at_acc(const Tensor& a, const Tensor& b, Tensor& c);

// y = x * W^T + b for a single row; W is [out,in], b may be empty.
void linear_row(std::span<const double> x, const Tensor& w, const Tensor& b,
                std::span<double> y);

double dot(std::span<const double> a, std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

// In-place numerically stable softmax; empty input throws.
void softmax_inplace(std::span<double> xs);
std::vector<double> softmax(std::span<const double> logits);

// -log softmax(logits)[target]; throws on out-of-range target.
double cross_entropy(std::span<const double> logits, int64_t target);

double softplus(double x);
double sigmoid(double x);
double silu(double x);

// Branch-light exp, ~2e-15 relative error, inlines into SIMD loops (the
// SSM scan calls it per channel/state element every step). Underflows to
// 0 below -700.
inline double fast_exp(double x) {
  constexpr double kLog2e = 1.4426950408889634074;
  constexpr double kLn2Hi = 6.93147180369123816490e-01;
  constexpr double kLn2Lo = 1.90821492927058770002e-10;
  const double kd = __builtin_nearbyint(x * kLog2e);
  double r = x - kd * kLn2Hi;
  r -= kd * kLn2Lo;
  // Taylor to r^11; |r| <= ln2/2 keeps the truncation below 1e-14
  double p = 1.0 / 39916800.0;
  p = p * r + 1.0 / 3628800.0;
  p = p * r + 1.0 / 362880.0;
  p = p * r + 1.0 / 40320.0;
  p = p * r + 1.0 / 5040.0;
  p = p * r + 1.0 / 720.0;
  p = p * r + 1.0 / 120.0;
  p = p * r + 1.0 / 24.0;
  p = p * r + 1.0 / 6.0;
  p = p * r + 0.5;
  p = p * r + 1.0;
  p = p * r + 1.0;
  const int64_t ki = static_cast<int64_t>(kd);
  const uint64_t exp_bits = static_cast<uint64_t>(ki + 1023) << 52;
  double two_k;
  __builtin_memcpy(&two_k, &exp_bits, 8);
  return (x < -700.0) ? 0.0 : (x > 700.0 ? std::numeric_limits<double>::infinity() : p * two_k);
}

}  // namespace streamdec
