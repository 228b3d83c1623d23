#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ub/layers.hpp"
#include "ub/tensor.hpp"

namespace ub {

struct OptimizerConfig {
  std::string kind = "adam";  // adam | sgd
  double learning_rate = 1e-4;
  // SGD velocity coefficient; for Adam this is beta1 (the paper-style
  // "momentum" reading).
  double momentum = 0.9;
  double weight_decay = 0.0;  // coupled: added to the gradient
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const;
};

// Per-scalar update gate layered on top of a TrainableMask; aligned with
// model.params(). Empty inner vectors mean "all scalars of that tensor".
struct ScalarMask {
  std::vector<std::vector<std::uint8_t>> per_tensor;

  bool allows(std::size_t tensor_idx, std::size_t scalar_idx) const {
    if (per_tensor.empty()) return true;
    const auto& v = per_tensor[tensor_idx];
    return v.empty() || v[scalar_idx] != 0;
  }
  bool empty() const { return per_tensor.empty(); }
};

struct OptimizerState {
  // First moment (Adam) / velocity (SGD), aligned with the parameter list.
  std::vector<std::vector<double>> m;
  // Second moment (Adam only).
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;  // completed steps

  void init_like(const std::vector<Tensor>& params, const OptimizerConfig& cfg);
  bool initialized() const { return !m.empty(); }
};

// One SGD step with coupled weight decay: g' = g + wd*theta;
// v <- mu*v + g'; theta <- theta - lr*v. Masked-out scalars are untouched,
// including their state.
void sgd_step(std::vector<Tensor>& params, OptimizerState& state,
              const OptimizerConfig& cfg, const TrainableMask* freeze,
              const ScalarMask* scalars);

// Standard bias-corrected Adam; weight decay added to the gradient before
// the moment updates. state.t must already count this step (t >= 1).
void adam_step(std::vector<Tensor>& params, OptimizerState& state,
               const OptimizerConfig& cfg, const TrainableMask* freeze,
               const ScalarMask* scalars);

// Dispatches on cfg.kind and advances state.t.
void optimizer_step(std::vector<Tensor>& params, OptimizerState& state,
                    const OptimizerConfig& cfg,
                    const TrainableMask* freeze = nullptr,
                    const ScalarMask* scalars = nullptr);

}  // namespace ub
