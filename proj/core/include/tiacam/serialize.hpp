#pragma once

#include <cstdint>
#include <string>

#include "tiacam/trainer.hpp"

namespace tiacam {

/// Writes every mutable piece of a training run as a versioned binary file
/// with named sections: extractor parameters and running statistics,
/// distortion parameters, discriminator parameters, the three optimizers'
/// moments, the RNG stream, and the round/step counters, stamped with the
/// hash of the config that built the state.
void save_checkpoint(const std::string& path, const TrainState& st,
                     uint64_t config_hash);

/// Restores into a state built from the same config and returns the stored
/// config hash. Corrupt files and shape mismatches throw DataError; when
/// expected_config_hash is nonzero a mismatch throws ConfigError naming both
/// hashes. Training resumed from the result is bit-identical to a run that
/// never stopped.
uint64_t load_checkpoint(const std::string& path, TrainState& st,
                         uint64_t expected_config_hash = 0);

/// Reads only the config hash stamp, for pairing files with their configs.
uint64_t peek_checkpoint_hash(const std::string& path);

/// Order-stable FNV-1a over the extractor's parameters and running
/// statistics. Identifies the exact feature map a signature was registered
/// against; any weight change moves the hash.
uint64_t extractor_hash(InvariantExtractor& m);

}  // namespace tiacam
