#pragma once

#include <string>

#include "lvd/config.hpp"
#include "lvd/trainer.hpp"

namespace lvd {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

uint32_t crc32(const void* data, size_t len, uint32_t crc = 0);

struct CheckpointMeta {
    int64_t global_step = 0;
    std::string note;
};

// Binary archive: magic, JSON header (format version, config snapshot, vocab,
// parameter index with byte offsets, rng state), little-endian float64 payload,
// crc32 footer. save/load round-trips bit-exactly.
void save_checkpoint(const std::string& path, const GenerativeModel& model,
                     const RunConfig& config, const TrainState& state, const RngSuite& rng,
                     const CheckpointMeta& meta = {});

struct LoadedCheckpoint {
    RunConfig config;
    GenerativeModel model;
    TrainState state;
    RngSuite rng;
    CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace lvd
