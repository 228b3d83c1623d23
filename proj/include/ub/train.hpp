#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "ub/dataset.hpp"
#include "ub/layers.hpp"
#include "ub/optim.hpp"

namespace ub {

struct TrainConfig {
  std::size_t epochs = 0;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;  // drives per-epoch shuffling
  std::size_t freeze_k = 1;
  bool shuffle = true;

  void validate() const;
};

enum class Quadrant { RetainTrain, ForgetTrain, RetainTest, ForgetTest };

// Samples consumed by the optimizer, per split quadrant.
struct AccessCounts {
  std::uint64_t retain_train = 0;
  std::uint64_t forget_train = 0;
  std::uint64_t retain_test = 0;
  std::uint64_t forget_test = 0;

  void add(Quadrant q, std::uint64_t n);
  std::uint64_t total() const {
    return retain_train + forget_train + retain_test + forget_test;
  }
};

struct TrainResult {
  std::vector<double> epoch_mean_loss;
  std::size_t dropped_singleton_batches = 0;
};

// Optional knobs for train(); everything defaults to a plain run.
struct TrainHooks {
  // Resume: optimizer state carried across calls, epochs already done.
  OptimizerState* opt_state = nullptr;
  std::size_t start_epoch = 0;
  // Per-scalar update gate (saliency masking).
  const ScalarMask* scalar_mask = nullptr;
  // Per-sample split provenance for the access audit, aligned with data.
  const std::vector<Quadrant>* provenance = nullptr;
  AccessCounts* access = nullptr;
  // Called at the start of every epoch; returns the labels to train with
  // (random-label and boundary-shrink relabeling). Must return data.size()
  // labels. When absent the dataset's own labels are used.
  std::function<std::vector<int>(std::size_t epoch)> epoch_labels;
};

// Deterministic minibatch training. Shuffling is a pure function of
// (cfg.seed, epoch); single-sample leftover batches are dropped (batch norm
// needs n >= 2) and counted. freeze_k > 1 runs the frozen prefix tape-free.
TrainResult train(InstrumentedModel& model, const LabeledDataset& data,
                  const TrainConfig& cfg, const OptimizerConfig& opt_cfg,
                  const TrainHooks& hooks = {});

// Fraction of samples whose argmax logit (ties broken toward the lowest
// class index) equals the label. Eval mode, batched.
double evaluate_accuracy(InstrumentedModel& model, const LabeledDataset& data);

// Argmax class per sample (eval mode), same tie rule.
std::vector<int> predict(InstrumentedModel& model, const LabeledDataset& data);
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace ub
