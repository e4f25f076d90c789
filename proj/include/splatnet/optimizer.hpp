#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "splatnet/error.hpp"
#include "splatnet/network.hpp"

namespace splatnet {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError("learning_rate must be finite and >= 0");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("adam_beta1 must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam_beta2 must be in [0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("adam_epsilon must be > 0");
  }
};

/// First and second moments per parameter tensor, mirroring Parameters.
struct OptimizerState {
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
  std::uint64_t step = 0;

  static OptimizerState for_params(const Parameters& params) {
    OptimizerState s;
    for (const auto& t : params.tensors) {
      s.first.emplace_back(t.size(), 0.0);
      s.second.emplace_back(t.size(), 0.0);
    }
    return s;
  }

  bool matches(const Parameters& params) const {
    if (first.size() != params.tensors.size() || second.size() != params.tensors.size()) return false;
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (first[i].size() != params.tensors[i].size() || second[i].size() != params.tensors[i].size()) {
        return false;
      }
    }
    return true;
  }

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// Bias-corrected Adam update of every trainable tensor. A non-finite
/// gradient refuses the whole step and leaves params and state untouched.
inline void adam_step(Parameters& params, const Parameters& grads, OptimizerState& state,
                      const AdamConfig& config) {
  config.validate();
  if (grads.tensors.size() != params.tensors.size()) throw ShapeError("adam: gradient layout mismatch");
  if (state.first.empty()) state = OptimizerState::for_params(params);
  if (!state.matches(params)) throw ShapeError("adam: optimizer state layout mismatch");
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    if (grads.tensors[i].size() != params.tensors[i].size()) throw ShapeError("adam: tensor size mismatch");
    if (!params.tensors[i].trainable) continue;
    for (double g : grads.tensors[i].values) {
      if (!std::isfinite(g)) {
        throw NonFiniteGradient("non-finite gradient in '" + params.tensors[i].name + "'");
      }
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    if (!params.tensors[i].trainable) continue;
    auto& p = params.tensors[i].values;
    const auto& g = grads.tensors[i].values;
    auto& m = state.first[i];
    auto& v = state.second[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      p[k] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

}  // namespace splatnet
