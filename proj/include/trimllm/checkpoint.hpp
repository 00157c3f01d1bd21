#pragma once

// Binary checkpoint container. Little-endian throughout:
//
//   "TRIM"  u32 version
//   u32 vocab_size, d_model, n_heads, d_ffn, n_blocks, max_seq_len; u64 seed
//   u8 alive flag per unit (block-major, MHA before MLP)
//   u32 record count, then per live tensor:
//     u32 name length, name bytes, u32 rank, u32 dims..., f32 values...
//   u64 FNV-1a hash of every preceding byte

#include <cstdint>
#include <filesystem>
#include <vector>

#include "trimllm/model.hpp"

namespace trimllm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size);

template <class Real>
std::vector<std::uint8_t> serialize_checkpoint(const TrimModel<Real>& model);

/// Throws FormatError on bad magic, version, checksum or layout.
/// Every unit of the loaded model is trainable.
template <class Real>
TrimModel<Real> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

template <class Real>
void save_checkpoint(const TrimModel<Real>& model, const std::filesystem::path& path);

template <class Real>
TrimModel<Real> load_checkpoint(const std::filesystem::path& path);

}  // namespace trimllm
