// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint format: a JSON manifest (<prefix>.json) listing tensor name,
// shape, dtype "f32", byte offset and byte length, plus a binary blob
// (<prefix>.bin) of little-endian 32-bit floats, row-major, concatenated in
// manifest order. Adapter manifests also carry the layout, so a checkpoint is
// self-describing.

#pragma once

#include <filesystem>
#include <utility>

#include "lor2c/adapters.hpp"
#include "lor2c/model.hpp"

namespace lor2c {

void save_base_checkpoint(const std::filesystem::path& prefix, const BaseWeights& w);
BaseWeights load_base_checkpoint(const std::filesystem::path& prefix);

void save_adapter_checkpoint(const std::filesystem::path& prefix, const ModelLayout& layout,
                             const AdapterParams& params);
std::pair<ModelLayout, AdapterParams> load_adapter_checkpoint(const std::filesystem::path& prefix);

}  // namespace lor2c
