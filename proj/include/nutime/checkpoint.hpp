// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "nutime/model.hpp"

namespace nutime {

/// Binary layout (all integers little-endian):
///   "NUTM" | u32 version | u64 meta_len | meta (UTF-8 JSON) | u32 count |
///   count x { u32 name_len | name | u8 dtype (1 = f32) | u32 ndim |
///             ndim x u64 dim | u64 offset | u64 nbytes } |
///   u64 payload_len | payload
/// Offsets are relative to the payload start; tensors are stored in
/// directory order, back to back, and the payload ends the file.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

struct Checkpoint {
  std::string metadata;
  std::vector<NamedTensor> tensors;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws DataError on bad magic, version mismatch, truncation, overlapping or
/// out-of-bounds directory entries, size disagreements and trailing bytes.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Metadata gets `{"model": <config>, ...extra}`; tensors are cast to f32.
template <typename T>
Checkpoint model_checkpoint(const Model<T>& model, const std::string& extra_metadata_json = "{}");

/// Rebuilds a model from the "model" metadata entry and the tensors. Every
/// tensor must match a parameter of that configuration by name and shape.
template <typename T>
Model<T> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace nutime
