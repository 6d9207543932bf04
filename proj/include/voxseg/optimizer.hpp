#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "voxseg/errors.hpp"
#include "voxseg/network.hpp"

namespace voxseg {

struct TrainConfig {
  double eta0 = 1e-2;
  int64_t t_max = 500;
  double momentum = 0.99;
  double weight_decay = 1e-6;
  int64_t batch_size = 2;
  int64_t steps_per_epoch = 250;
  uint64_t seed = 0;
  double dice_epsilon = 1e-5;
};

inline void validate_train_config(const TrainConfig& cfg) {
  if (cfg.eta0 <= 0.0) throw InvalidSpec("train config: eta0 must be positive");
  if (cfg.t_max < 1) throw InvalidSpec("train config: t_max must be positive");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw InvalidSpec("train config: momentum must lie in [0,1)");
  if (cfg.weight_decay < 0.0) throw InvalidSpec("train config: weight decay must be non-negative");
  if (cfg.batch_size < 1) throw InvalidSpec("train config: batch size must be positive");
  if (cfg.steps_per_epoch < 0) throw InvalidSpec("train config: steps per epoch must be non-negative");
  if (cfg.dice_epsilon <= 0.0) throw InvalidSpec("train config: dice epsilon must be positive");
}

// Polynomial decay eta0 * (1 - t/t_max)^0.9, evaluated at epoch boundaries.
inline double lr_at(int64_t t, const TrainConfig& cfg) {
  if (t < 0 || t > cfg.t_max) throw InvalidSpec("lr_at: epoch outside [0, t_max]");
  const double frac = 1.0 - static_cast<double>(t) / static_cast<double>(cfg.t_max);
  return cfg.eta0 * std::pow(frac, 0.9);
}

struct OptimizerState {
  std::vector<std::vector<double>> velocity;
  int64_t epoch = 0;
  int64_t step = 0;
};

inline OptimizerState make_optimizer(const NetworkPlan& plan) {
  OptimizerState opt;
  opt.velocity.resize(plan.param_info.size());
  for (size_t i = 0; i < plan.param_info.size(); ++i)
    opt.velocity[i].assign(static_cast<size_t>(plan.param_info[i].count()), 0.0);
  return opt;
}

//   g <- grad + weight_decay * param     (kernel weights only)
//   v <- momentum * v - lr * g
//   param <- param + momentum * v - lr * g
// The whole step aborts before touching anything if any gradient is not
// finite.
inline void sgd_nesterov_step(const NetworkPlan& plan, NetworkState& state, OptimizerState& opt, double lr,
                              double momentum, double weight_decay) {
  for (size_t i = 0; i < state.params.size(); ++i)
    for (double g : state.params[i].grad)
      if (!std::isfinite(g))
        throw NonFiniteGradient("non-finite gradient in " + plan.param_info[i].name);
  for (size_t i = 0; i < state.params.size(); ++i) {
    auto& p = state.params[i];
    auto& v = opt.velocity[i];
    const double wd = plan.param_info[i].is_weight ? weight_decay : 0.0;
    for (size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j] + wd * p.value[j];
      v[j] = momentum * v[j] - lr * g;
      p.value[j] += momentum * v[j] - lr * g;
    }
  }
  ++opt.step;
}

}  // namespace voxseg
