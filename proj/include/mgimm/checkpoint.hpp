#pragma once

#include <cstdint>
#include <string>

#include "mgimm/multimodal.hpp"
#include "mgimm/vocab.hpp"

namespace mgimm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout, all integers little-endian:
///   "MGIMMCK1" | u32 format_version | u32 header_len | header JSON
///   | u32 tensor_count | tensors
/// Each tensor: u32 name_len | name | u8 section | u8 flags (1 trainable,
/// 2 buffer) | u32 ndims | u64 dims... | float32 data, row-major.
/// The header holds format_version, stage, seed, vocab_hash, the config
/// echo, the model dims and the vocabulary itself.
struct Checkpoint {
    int stage = 1;
    std::uint64_t seed = 0;
    std::string config;  // JSON echo of the run config
    ModelConfig model;
    Vocab vocab;
    ParamStore<float> params;
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(const std::string& bytes);

/// Written to a temporary file first, then renamed into place.
void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);

/// Throws IoError on unreadable or truncated files and ValidationError on a
/// version or vocabulary-hash mismatch.
Checkpoint load_checkpoint(const std::string& path);

/// Writes text to path through a temporary file and a rename.
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace mgimm
