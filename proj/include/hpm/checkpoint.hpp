#pragma once

// HPMK checkpoint container: magic, version, config text, named f32 tensors,
// RNG streams, progress counters, CRC32 footer. Loading verifies the checksum
// before parsing, so truncation and corruption surface as explicit errors.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hpm/rng.hpp"
#include "hpm/tensor.hpp"

namespace hpm {

struct ParamRecord {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct CheckpointData {
  std::string config_text;
  std::int64_t epochs_done = 0;
  std::uint64_t adam_step = 0;
  std::uint64_t ema_updates = 0;
  std::array<Rng::State, 3> rng_states{};  // data-order, mask, init streams
  std::vector<ParamRecord> records;
};

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

}  // namespace hpm
