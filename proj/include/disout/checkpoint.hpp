#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "disout/tensor.hpp"
#include "disout/train.hpp"

namespace disout {

/// One named record of the checkpoint container. Tensors carry their
/// precision; `words` entries hold raw 64-bit integers (RNG state, counters).
struct CheckpointEntry {
  std::string name;
  bool is_words = false;
  Tensor tensor;
  std::vector<std::uint64_t> words;
};

/// Little-endian container: "DSOUTCK1", u64 entry count, then per entry
/// u32 name length, name bytes, u8 tag (1 = f32, 2 = f64, 3 = u64 words),
/// u32 rank, u64 dims, raw values.
void write_checkpoint(const std::string& path,
                      const std::vector<CheckpointEntry>& entries);

/// FormatError on bad magic, unknown tag or truncation; IoError when the
/// file cannot be opened.
std::vector<CheckpointEntry> read_checkpoint(const std::string& path);

/// Parameters, momentum buffers, generator words and loop counters.
void save_train_state(const std::string& path, const TrainState& state);

/// Restores into a state whose network was built from the same config.
/// FormatError when a required entry is missing or has the wrong shape.
void load_train_state(const std::string& path, TrainState& state);

}  // namespace disout
