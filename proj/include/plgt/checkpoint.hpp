#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "plgt/tensor.hpp"

namespace plgt {

// Binary checkpoint container: magic "PLGT", u32 version, length-prefixed
// UTF-8 config blob, a tensor directory (name, dtype tag, rank, extents,
// little-endian payload) and a trailing CRC32 over everything before it.
struct CheckpointData {
    static constexpr uint32_t kVersion = 1;

    std::string config_blob;
    std::vector<std::pair<std::string, Tensor>> tensors;             // float64
    std::vector<std::pair<std::string, std::vector<uint64_t>>> u64s;  // counters etc.

    const Tensor* find_tensor(const std::string& name) const;
    const std::vector<uint64_t>* find_u64(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::string& path);

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed = 0);

}  // namespace plgt
