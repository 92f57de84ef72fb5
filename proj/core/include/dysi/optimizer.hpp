// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dysi/errors.hpp"
#include "dysi/tensor.hpp"

namespace dysi {

// Ordered, named parameter registry. Registration order is the canonical
// order for optimizer state, checkpoints, and initialization draws.
template <class T>
class ParamSetT {
 public:
  TensorT<T> add(const std::string& name, TensorT<T> tensor) {
    if (index_.count(name)) throw StateError("duplicate parameter name: " + name);
    index_[name] = names_.size();
    names_.push_back(name);
    tensors_.push_back(tensor);
    return tensor;
  }

  const TensorT<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw StateError("unknown parameter: " + name);
    return tensors_[it->second];
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t count() const { return tensors_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  TensorT<T>& at(std::size_t i) { return tensors_[i]; }
  const TensorT<T>& at(std::size_t i) const { return tensors_[i]; }
  const std::string& name_at(std::size_t i) const { return names_[i]; }

  std::int64_t total_size() const {
    std::int64_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  void zero_grads() {
    for (auto& t : tensors_) {
      t.grad_mut().assign(t.grad_mut().size(), T(0));
    }
  }

 private:
  std::vector<std::string> names_;
  std::vector<TensorT<T>> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Adam moment buffers, aligned with a ParamSet by index.
template <class T>
struct OptimizerStateT {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;

  void init(const ParamSetT<T>& params) {
    first_moment.clear();
    second_moment.clear();
    step = 0;
    for (std::size_t i = 0; i < params.count(); ++i) {
      first_moment.emplace_back(params.at(i).size(), T(0));
      second_moment.emplace_back(params.at(i).size(), T(0));
    }
  }
};

// One Adam update with bias correction; weight decay is fixed at zero.
// Parameters without a gradient buffer are treated as zero-gradient.
template <class T>
void adam_step(ParamSetT<T>& params, OptimizerStateT<T>& state, double lr) {
  if (state.first_moment.size() != params.count())
    throw ShapeError("adam_step: state does not match parameter set");
  state.step += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.count(); ++i) {
    auto& p = params.at(i);
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != static_cast<std::size_t>(p.size()))
      throw ShapeError("adam_step: moment shape mismatch for " + params.name_at(i));
    const bool has_grad = p.has_grad();
    const std::vector<T>* g = has_grad ? &p.grad() : nullptr;
    auto& values = p.values_mut();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double gj = has_grad ? static_cast<double>((*g)[j]) : 0.0;
      const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * gj;
      const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double m_hat = mj / bc1;
      const double v_hat = vj / bc2;
      values[j] = static_cast<T>(static_cast<double>(values[j]) -
                                 lr * m_hat / (std::sqrt(v_hat) + state.epsilon));
    }
  }
}

// Linear warmup to `peak` over `warmup` steps, then peak * sqrt(warmup/step).
inline double lr_inverse_sqrt(std::int64_t step, std::int64_t warmup, double peak) {
  if (warmup <= 0) throw ConfigError("lr schedule: warmup must be positive");
  if (step < 1) throw ConfigError("lr schedule: step must be >= 1");
  if (step <= warmup)
    return peak * static_cast<double>(step) / static_cast<double>(warmup);
  return peak * std::sqrt(static_cast<double>(warmup) / static_cast<double>(step));
}

using ParamSet = ParamSetT<float>;
using OptimizerState = OptimizerStateT<float>;

}  // namespace dysi
