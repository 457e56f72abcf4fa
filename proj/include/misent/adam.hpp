#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "misent/error.hpp"
#include "misent/model.hpp"

namespace misent {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment accumulators, one pair per parameter tensor, in the
// order the model enumerates them.
template <typename Real>
struct OptimizerState {
  std::uint64_t t = 0;
  std::vector<std::string> names;
  std::vector<std::vector<Real>> m;
  std::vector<std::vector<Real>> v;

  template <typename Refs>
  static OptimizerState zeros_for(const Refs& refs) {
    OptimizerState s;
    for (const auto& ref : refs) {
      s.names.push_back(ref.name);
      s.m.emplace_back(ref.size, Real{0});
      s.v.emplace_back(ref.size, Real{0});
    }
    return s;
  }
};

// Bias-corrected Adam. A non-finite gradient aborts before any state or
// parameter is touched.
template <typename Real>
void adam_step(std::vector<TensorRef<Real>>& params,
               const std::vector<TensorRef<Real>>& grads,
               OptimizerState<Real>& state, const AdamConfig& config) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ShapeMismatch("optimizer tensor count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size != grads[i].size || params[i].name != grads[i].name)
      throw ShapeMismatch("optimizer tensor '" + params[i].name +
                          "' does not match gradient '" + grads[i].name + "'");
    if (state.m[i].size() != params[i].size)
      throw ShapeMismatch("optimizer state for '" + params[i].name +
                          "' has wrong size");
    for (std::size_t j = 0; j < grads[i].size; ++j)
      if (!std::isfinite(static_cast<double>(grads[i].data[j])))
        throw NonFiniteGradient("non-finite gradient in tensor '" +
                                grads[i].name + "' at index " +
                                std::to_string(j));
  }

  state.t += 1;
  const Real lr = static_cast<Real>(config.learning_rate);
  const Real b1 = static_cast<Real>(config.beta1);
  const Real b2 = static_cast<Real>(config.beta2);
  const Real eps = static_cast<Real>(config.eps);
  const Real corr1 =
      Real{1} - static_cast<Real>(std::pow(config.beta1, static_cast<double>(state.t)));
  const Real corr2 =
      Real{1} - static_cast<Real>(std::pow(config.beta2, static_cast<double>(state.t)));

  for (std::size_t i = 0; i < params.size(); ++i) {
    Real* p = params[i].data;
    const Real* g = grads[i].data;
    Real* m = state.m[i].data();
    Real* v = state.v[i].data();
    for (std::size_t j = 0; j < params[i].size; ++j) {
      m[j] = b1 * m[j] + (Real{1} - b1) * g[j];
      v[j] = b2 * v[j] + (Real{1} - b2) * g[j] * g[j];
      const Real m_hat = m[j] / corr1;
      const Real v_hat = v[j] / corr2;
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

}  // namespace misent
