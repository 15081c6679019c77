#include "streamdec/optim.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace streamdec {

double AdamOptimizer::lr_at(int64_t step) const {
  if (cfg_.warmup_steps > 0 && step < cfg_.warmup_steps) {
    return cfg_.peak_lr * static_cast<double>(step) / static_cast<double>(cfg_.warmup_steps);
  }
  if (cfg_.decay == DecaySchedule::kCosine && cfg_.total_steps > cfg_.warmup_steps) {
    const double progress = static_cast<double>(step - cfg_.warmup_steps) /
                            static_cast<double>(cfg_.total_steps - cfg_.warmup_steps);
    const double p = std::min(1.0, std::max(0.0, progress));
    return cfg_.peak_lr * 0.5 * (1.0 + std::cos(p * 3.14159265358979323846));
  }
  return cfg_.peak_lr;
}

void AdamOptimizer::step(std::span<NamedTensorRef> params) {
  if (m_.empty()) {
    for (auto& p : params) {
      m_.emplace_back(p.value->shape);
      v_.emplace_back(p.value->shape);
    }
  }
  if (m_.size() != params.size()) {
    throw std::invalid_argument("optimizer step: parameter count changed");
  }
  const double lr = lr_at(step_count_);
  // bias correction uses 1-based update index
  const double t = static_cast<double>(step_count_ + 1);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& val = *params[pi].value;
    Tensor& grad = *params[pi].grad;
    if (!same_shape(val, grad) || !same_shape(val, m_[pi])) {
      throw std::invalid_argument("optimizer step: shape mismatch for " + params[pi].name);
    }
    double* mv = m_[pi].data.data();
    double* vv = v_[pi].data.data();
    const double* g = grad.data.data();
    double* x = val.data.data();
    const int64_t n = val.numel();
    for (int64_t i = 0; i < n; ++i) {
      mv[i] = cfg_.beta1 * mv[i] + (1.0 - cfg_.beta1) * g[i];
      vv[i] = cfg_.beta2 * vv[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = mv[i] / bc1;
      const double vhat = vv[i] / bc2;
      x[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
  ++step_count_;
}

void AdamOptimizer::zero_grads(std::span<NamedTensorRef> params) {
  for (auto& p : params) p.grad->zero();
}

void AdamOptimizer::save_state(std::ostream& os) const {
  const int64_t n = static_cast<int64_t>(m_.size());
  os.write(reinterpret_cast<const char*>(&step_count_), sizeof(step_count_));
  os.write(reinterpret_cast<const char*>(&n), sizeof(n));
  for (int64_t i = 0; i < n; ++i) {
    const int64_t sz = m_[static_cast<size_t>(i)].numel();
    os.write(reinterpret_cast<const char*>(&sz), sizeof(sz));
    os.write(reinterpret_cast<const char*>(m_[static_cast<size_t>(i)].data.data()),
             static_cast<std::streamsize>(sz) * 8);
    os.write(reinterpret_cast<const char*>(v_[static_cast<size_t>(i)].data.data()),
             static_cast<std::streamsize>(sz) * 8);
  }
}

void AdamOptimizer::load_state(std::istream& is, std::span<NamedTensorRef> params) {
  int64_t n = 0;
  is.read(reinterpret_cast<char*>(&step_count_), sizeof(step_count_));
  is.read(reinterpret_cast<char*>(&n), sizeof(n));
  if (n != static_cast<int64_t>(params.size())) {
    throw std::runtime_error("optimizer state: parameter count mismatch");
  }
  m_.clear();
  v_.clear();
  for (int64_t i = 0; i < n; ++i) {
    int64_t sz = 0;
    is.read(reinterpret_cast<char*>(&sz), sizeof(sz));
    const auto& shape = params[static_cast<size_t>(i)].value->shape;
    if (sz != shape_numel(shape)) {
      throw std::runtime_error("optimizer state: tensor size mismatch");
    }
    Tensor m(shape), v(shape);
    is.read(reinterpret_cast<char*>(m.data.data()), static_cast<std::streamsize>(sz) * 8);
    is.read(reinterpret_cast<char*>(v.data.data()), static_cast<std::streamsize>(sz) * 8);
    m_.push_back(std::move(m));
    v_.push_back(std::move(v));
  }
  if (!is) throw std::runtime_error("optimizer state: truncated stream");
}

}  // namespace streamdec
