#pragma once

#include <cstdint>
#include <string>

#include "ub/layers.hpp"
#include "ub/optim.hpp"

namespace ub {

// Bit-exact binary container: 8-byte magic, u32 version, length-prefixed
// JSON header (arch, lineage, array directory, extras), then each array as
// raw little-endian doubles. Parameters and running statistics round-trip
// exactly.
void save_model(const InstrumentedModel& model, const std::string& path);
InstrumentedModel load_model(const std::string& path);

// Training checkpoint: model snapshot plus optimizer state, epoch counter
// and config digest, so a resumed run continues the exact trajectory.
struct TrainCheckpoint {
  InstrumentedModel model;
  OptimizerState opt_state;
  std::uint64_t epoch = 0;
  std::string config_digest;
};

void save_train_checkpoint(const TrainCheckpoint& ckpt,
                           const std::string& path);
TrainCheckpoint load_train_checkpoint(const std::string& path);

}  // namespace ub
