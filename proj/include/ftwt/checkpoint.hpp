#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ftwt/gating.hpp"
#include "ftwt/network.hpp"

namespace ftwt {

// Binary checkpoint, little-endian:
//   magic "FTWT" | u32 version=1 | u32 tensor_count |
//   per tensor: u16 name_len | name | u8 dtype(0=f32) | u8 ndim | ndim x u32 dims | payload |
//   u32 metadata_len | UTF-8 JSON metadata
// Round trips are bit-exact; any structural deviation is a load error.

struct CheckpointMeta {
    int epoch = 0;
    uint64_t seed = 0;
    std::string config_digest;
    std::string arch; // registry name, used to rebuild the network on load
    int gate_from_block = 2;
    bool use_softmax = true;
    bool has_heads = false;
    bool folded = false;
};

void save_checkpoint(const Network& net, const std::vector<GatingHead>& heads,
                     const CheckpointMeta& meta, const std::string& path);

struct LoadedCheckpoint {
    Network net;
    std::vector<GatingHead> heads;
    CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Raw layer underneath the typed API; exposed for format tests.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;
void write_tensor_file(const NamedTensors& tensors, const std::string& metadata_json,
                       const std::string& path);
NamedTensors read_tensor_file(const std::string& path, std::string& metadata_json);

} // namespace ftwt
