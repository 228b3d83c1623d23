#include "ub/optim.hpp"

#include <cmath>

#include "ub/error.hpp"

namespace ub {

void OptimizerConfig::validate() const {
  if (kind != "adam" && kind != "sgd") {
    throw ConfigError("optimizer kind must be adam or sgd, got " + kind);
  }
  if (!(learning_rate > 0.0)) {
    throw ConfigError("learning_rate must be > 0");
  }
  if (momentum < 0.0 || momentum >= 1.0) {
    throw ConfigError("momentum must be in [0,1)");
  }
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (kind == "adam") {
    if (beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("beta2 must be in [0,1)");
    if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be > 0");
  }
}

void OptimizerState::init_like(const std::vector<Tensor>& params,
                               const OptimizerConfig& cfg) {
  m.clear();
  v.clear();
  t = 0;
  for (const Tensor& p : params) m.emplace_back(p.numel(), 0.0);
  if (cfg.kind == "adam") {
    for (const Tensor& p : params) v.emplace_back(p.numel(), 0.0);
  }
}

namespace {

void check_alignment(const std::vector<Tensor>& params,
                     const OptimizerState& state, bool need_v) {
  if (state.m.size() != params.size() ||
      (need_v && state.v.size() != params.size())) {
    throw ContractError("optimizer state is not aligned with the parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel() ||
        (need_v && state.v[i].size() != params[i].numel())) {
      throw ContractError("optimizer state shape mismatch at parameter " +
                          std::to_string(i));
    }
  }
}

}  // namespace

void sgd_step(std::vector<Tensor>& params, OptimizerState& state,
              const OptimizerConfig& cfg, const TrainableMask* freeze,
              const ScalarMask* scalars) {
  check_alignment(params, state, false);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (freeze != nullptr && !freeze->tensor_trainable(i)) continue;
    auto theta = params[i].values_mut();
    const bool has_grad = params[i].has_grad();
    auto grad = has_grad ? params[i].grad() : std::span<const double>{};
    auto& vel = state.m[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      if (scalars != nullptr && !scalars->allows(i, j)) continue;
      const double g =
          (has_grad ? grad[j] : 0.0) + cfg.weight_decay * theta[j];
      vel[j] = cfg.momentum * vel[j] + g;
      theta[j] -= cfg.learning_rate * vel[j];
    }
  }
}

void adam_step(std::vector<Tensor>& params, OptimizerState& state,
               const OptimizerConfig& cfg, const TrainableMask* freeze,
               const ScalarMask* scalars) {
  check_alignment(params, state, true);
  if (state.t < 1) throw ContractError("adam_step: step index must be >= 1");
  const double b1 = cfg.momentum, b2 = cfg.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (freeze != nullptr && !freeze->tensor_trainable(i)) continue;
    auto theta = params[i].values_mut();
    const bool has_grad = params[i].has_grad();
    auto grad = has_grad ? params[i].grad() : std::span<const double>{};
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      if (scalars != nullptr && !scalars->allows(i, j)) continue;
      const double g =
          (has_grad ? grad[j] : 0.0) + cfg.weight_decay * theta[j];
      m[j] = b1 * m[j] + (1.0 - b1) * g;
      v[j] = b2 * v[j] + (1.0 - b2) * g * g;
      const double mhat = m[j] / bias1;
      const double vhat = v[j] / bias2;
      theta[j] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_epsilon);
    }
  }
}

void optimizer_step(std::vector<Tensor>& params, OptimizerState& state,
                    const OptimizerConfig& cfg, const TrainableMask* freeze,
                    const ScalarMask* scalars) {
  if (!state.initialized()) state.init_like(params, cfg);
  state.t += 1;
  if (cfg.kind == "sgd") {
    sgd_step(params, state, cfg, freeze, scalars);
  } else if (cfg.kind == "adam") {
    adam_step(params, state, cfg, freeze, scalars);
  } else {
    throw ConfigError("unknown optimizer kind: " + cfg.kind);
  }
}

}  // namespace ub
