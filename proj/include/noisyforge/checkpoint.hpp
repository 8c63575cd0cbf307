#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "noisyforge/model.hpp"

namespace noisyforge {

// Binary checkpoint layout (all integers and reals little-endian):
//
//   "NFCK"  u16 version = 1  u16 record count
//   per record:  u8 kind  u8 rank  u32 dims[rank]  f32 payload[...]
//   u32 CRC-32 of the concatenated parameter payloads
//
// The first record is always the model input (kind 0, dims = per-sample input
// shape, no payload). Layer records follow in order:
//   1 Dense    dims [in, out]                        payload weight, bias
//   2 Conv     dims [out, in, kernel, stride, pad]   payload weight, bias
//   3 ReLU     rank 0
//   4 MaxPool  dims [window, stride]
//   5 Flatten  rank 0
// Injection points are not stored; they are re-derived from the options
// passed at load time.
std::vector<std::uint8_t> serialize_checkpoint(const ModelGraph& model);
ModelGraph deserialize_checkpoint(std::span<const std::uint8_t> bytes, InjectionOptions options = {});

void save_checkpoint(const ModelGraph& model, const std::filesystem::path& path);
ModelGraph load_checkpoint(const std::filesystem::path& path, InjectionOptions options = {});

// Loads and checks that the stored architecture equals `expected`'s.
ModelGraph load_checkpoint_as(const std::filesystem::path& path, const ModelGraph& expected);

}  // namespace noisyforge
