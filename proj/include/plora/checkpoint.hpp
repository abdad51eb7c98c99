// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "plora/model.hpp"

namespace plora {

// "PLRK" named-tensor container. Little-endian on disk regardless of host:
//   bytes 0..3   magic "PLRK"
//   bytes 4..7   u32 format version (currently 1)
//   bytes 8..15  u64 header text length in bytes
//   header text  (see docs/formats.md)
//   zero padding up to the next 64-byte boundary
//   payload      raw f32 tensors, each 64-byte aligned, offsets relative to
//                the payload base
struct TensorEntry {
    std::string name;
    std::string dtype;  // "f32"
    Shape shape;
    std::uint64_t offset = 0;  // relative to the payload base
    std::uint64_t nbytes = 0;
    bool frozen = false;
};

struct CheckpointHeader {
    std::uint32_t version = 0;
    std::string config_text;
    std::vector<TensorEntry> entries;
};

constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(Model<float>& model, const std::string& path);
Model<float> load_checkpoint(const std::string& path);
CheckpointHeader read_checkpoint_header(const std::string& path);

}  // namespace plora
