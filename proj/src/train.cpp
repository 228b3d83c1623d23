#include "ub/train.hpp"

#include "ub/error.hpp"
#include "ub/rng.hpp"

namespace ub {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (freeze_k < 1) throw ConfigError("freeze_k must be >= 1");
}

void AccessCounts::add(Quadrant q, std::uint64_t n) {
  switch (q) {
    case Quadrant::RetainTrain: retain_train += n; break;
    case Quadrant::ForgetTrain: forget_train += n; break;
    case Quadrant::RetainTest: retain_test += n; break;
    case Quadrant::ForgetTest: forget_test += n; break;
  }
}

TrainResult train(InstrumentedModel& model, const LabeledDataset& data,
                  const TrainConfig& cfg, const OptimizerConfig& opt_cfg,
                  const TrainHooks& hooks) {
  cfg.validate();
  opt_cfg.validate();
  if (data.size() == 0) throw DomainError("train: empty dataset");
  if (data.classes != model.arch().classes) {
    throw DomainError("train: dataset has " + std::to_string(data.classes) +
                      " classes, model expects " +
                      std::to_string(model.arch().classes));
  }
  if (hooks.provenance != nullptr && hooks.provenance->size() != data.size()) {
    throw ContractError("train: provenance tags not aligned with dataset");
  }

  const TrainableMask freeze = freeze_prefix(model, cfg.freeze_k);
  std::vector<Tensor> params = model.params();

  OptimizerState local_state;
  OptimizerState& state =
      hooks.opt_state != nullptr ? *hooks.opt_state : local_state;
  if (!state.initialized()) state.init_like(params, opt_cfg);

  TrainResult result;
  Tape tape;
  for (std::size_t epoch = hooks.start_epoch;
       epoch < hooks.start_epoch + cfg.epochs; ++epoch) {
    std::vector<int> labels =
        hooks.epoch_labels ? hooks.epoch_labels(epoch) : data.labels;
    if (labels.size() != data.size()) {
      throw ContractError("train: epoch_labels returned " +
                          std::to_string(labels.size()) + " labels for " +
                          std::to_string(data.size()) + " samples");
    }
    double loss_sum = 0.0;
    std::size_t steps = 0;
    const auto batches = batch_iter(data.size(), cfg.batch_size, cfg.seed,
                                    epoch, cfg.shuffle);
    for (const auto& batch : batches) {
      if (batch.size() < 2) {
        ++result.dropped_singleton_batches;
        continue;
      }
      Tensor x = data.gather(batch);
      std::vector<int> y(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) y[i] = labels[batch[i]];

      for (Tensor& p : params) p.zero_grad();
      tape.clear();
      {
        TapeScope scope(tape);
        Tensor logits = model.forward(x, Mode::Train, false,
                                      freeze.first_trainable_layer);
        Tensor loss = softmax_cross_entropy(logits, y);
        tape.backward(loss);
        loss_sum += loss.item();
      }
      optimizer_step(params, state, opt_cfg, &freeze, hooks.scalar_mask);
      ++steps;

      if (hooks.access != nullptr && hooks.provenance != nullptr) {
        for (std::size_t idx : batch)
          hooks.access->add((*hooks.provenance)[idx], 1);
      } else if (hooks.access != nullptr) {
        hooks.access->add(Quadrant::RetainTrain, batch.size());
      }
    }
    tape.clear();
    result.epoch_mean_loss.push_back(
        steps > 0 ? loss_sum / static_cast<double>(steps) : 0.0);
  }
  for (Tensor& p : params) p.zero_grad();
  return result;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.shape().size() != 2) {
    throw ShapeError("argmax_rows: need [n,C] logits");
  }
  const std::size_t n = logits.shape()[0], C = logits.shape()[1];
  auto lv = logits.values();
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < C; ++j) {
      if (lv[i * C + j] > lv[i * C + best]) best = j;  // ties keep lowest index
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

namespace {
constexpr std::size_t kEvalBatch = 256;
}

std::vector<int> predict(InstrumentedModel& model, const LabeledDataset& data) {
  if (data.size() == 0) throw DomainError("predict: empty dataset");
  std::vector<int> out;
  out.reserve(data.size());
  NoTapeScope guard;
  for (std::size_t start = 0; start < data.size(); start += kEvalBatch) {
    const std::size_t end = std::min(start + kEvalBatch, data.size());
    std::vector<std::size_t> idx(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    Tensor logits = model.forward(data.gather(idx), Mode::Eval);
    for (int c : argmax_rows(logits)) out.push_back(c);
  }
  return out;
}

double evaluate_accuracy(InstrumentedModel& model, const LabeledDataset& data) {
  const std::vector<int> pred = predict(model, data);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (pred[i] == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace ub
