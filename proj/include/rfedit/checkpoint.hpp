#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "rfedit/config.hpp"

namespace rfedit {

struct CheckpointError : std::runtime_error {
    enum class Kind { kIo, kBadMagic, kBadVersion, kBadHeader, kTruncated, kBadOffset };
    Kind kind;
    CheckpointError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

struct TensorEntry {
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;
};

// Model weights plus the metadata needed to rebuild the model without any
// out-of-band information.
struct Checkpoint {
    ModelConfig config;
    std::vector<TensorEntry> tensors;
};

// Layout: "FXSP" magic, u32 version, u64 header length, JSON header (config,
// vocabulary, tensor directory with offsets), then all tensor payloads as
// little-endian f32 in directory order. Saving a loaded checkpoint
// reproduces the file byte for byte.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

inline constexpr uint32_t kCheckpointVersion = 1;

}  // namespace rfedit
