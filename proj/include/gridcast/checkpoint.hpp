// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>

#include "gridcast/prednet.hpp"

namespace gridcast {

/// Checkpoint file, little-endian:
///   "GCCK" | u32 version | u64 manifest length | manifest JSON
///   | u64 count | count × (u32 name length | name | GCT1 tensor)
/// The manifest holds the model description under "model" plus any extra
/// fields the caller supplies.
template <typename Dtype>
void save_checkpoint(const std::string& path, const SequenceModel<Dtype>& model,
                     const nlohmann::json& extra = nlohmann::json::object());

/// Rebuilds the model from the manifest and overwrites every parameter with
/// the stored value. Missing or extra keys, or shape mismatches, throw.
template <typename Dtype>
std::unique_ptr<SequenceModel<Dtype>> load_checkpoint(const std::string& path,
                                                      nlohmann::json* manifest = nullptr);

/// Reads only the manifest.
nlohmann::json read_checkpoint_manifest(const std::string& path);

}  // namespace gridcast
