#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "finder/tensor.hpp"

namespace finder {

struct AdamOptions {
  double base_lr = 3e-4;
  double decay = 0.999;  // per-iteration multiplier on the learning rate
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
class AdamState {
 public:
  AdamState(const std::vector<Tensor<T>>& params, AdamOptions options = {}) : options_(options) {
    if (options.base_lr <= 0 || options.decay <= 0 || options.decay > 1)
      throw std::invalid_argument("adam: base_lr must be > 0 and decay in (0, 1]");
    first_.reserve(params.size());
    second_.reserve(params.size());
    for (const auto& p : params) {
      first_.emplace_back(p.size(), T(0));
      second_.emplace_back(p.size(), T(0));
    }
  }

  // Learning rate applied at the next step: base_lr * decay^step.
  double current_lr() const { return options_.base_lr * std::pow(options_.decay, static_cast<double>(step_)); }
  std::size_t step() const { return step_; }
  const AdamOptions& options() const { return options_; }

  std::vector<std::vector<T>>& first_moments() { return first_; }
  std::vector<std::vector<T>>& second_moments() { return second_; }
  const std::vector<std::vector<T>>& first_moments() const { return first_; }
  const std::vector<std::vector<T>>& second_moments() const { return second_; }
  void advance() { ++step_; }

 private:
  AdamOptions options_;
  std::vector<std::vector<T>> first_;
  std::vector<std::vector<T>> second_;
  std::size_t step_ = 0;
};

template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state) {
  auto& m = state.first_moments();
  auto& v = state.second_moments();
  if (m.size() != params.size()) throw std::invalid_argument("adam: state tracks a different parameter list");
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p].has_grad()) throw std::invalid_argument("adam: parameter " + std::to_string(p) + " has no gradient");
    if (m[p].size() != params[p].size()) throw ShapeError("adam: moment shape differs from parameter " + std::to_string(p));
  }
  const auto& o = state.options();
  const double lr = state.current_lr();
  const double t = static_cast<double>(state.step() + 1);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  const T b1 = static_cast<T>(o.beta1), b2 = static_cast<T>(o.beta2);
  const T inv_c1 = static_cast<T>(1.0 / c1), inv_c2 = static_cast<T>(1.0 / c2);
  const T step = static_cast<T>(lr), eps = static_cast<T>(o.epsilon);
  for (std::size_t p = 0; p < params.size(); ++p) {
    T* data = params[p].data().data();
    const T* grad = params[p].grad().data();
    T* mp = m[p].data();
    T* vp = v[p].data();
    const std::size_t n = params[p].size();
    for (std::size_t i = 0; i < n; ++i) {
      const T g = grad[i];
      mp[i] = b1 * mp[i] + (T(1) - b1) * g;
      vp[i] = b2 * vp[i] + (T(1) - b2) * g * g;
      data[i] -= step * (mp[i] * inv_c1) / (std::sqrt(vp[i] * inv_c2) + eps);
    }
  }
  state.advance();
}

template <typename T>
double global_grad_norm(const std::vector<Tensor<T>>& params) {
  double sq = 0.0;
  for (const auto& p : params)
    if (p.has_grad()) sq += static_cast<double>(detail::vec_map(p.grad()).squaredNorm());
  return std::sqrt(sq);
}

// Rescales all gradients so their joint L2 norm is at most `threshold`.
// Returns the norm before clipping.
template <typename T>
double clip_gradients(std::vector<Tensor<T>>& params, double threshold) {
  if (!(threshold > 0)) throw std::invalid_argument("clip_gradients: threshold must be positive");
  const double norm = global_grad_norm(params);
  if (norm > threshold) {
    const T scale = static_cast<T>(threshold / norm);
    for (auto& p : params)
      if (p.has_grad()) detail::vec_map(p.grad()) *= scale;
  }
  return norm;
}

// Zeroes gradients in place; buffers stay allocated for the next step.
template <typename T>
void zero_grad(std::vector<Tensor<T>>& params) {
  for (auto& p : params)
    if (p.has_grad()) std::fill(p.grad().begin(), p.grad().end(), T(0));
}

}  // namespace finder
