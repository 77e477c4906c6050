// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "iene/nets/params.hpp"

namespace iene::nets {

// Checkpoint directory layout: one binary file per parameter group holding
// little-endian arrays behind a shape header, plus params_manifest.json
// naming the groups, array shapes and optimizer specs. Arrays are stored at
// full float64 width so a save/load round trip is bitwise exact.
void save_checkpoint(const std::filesystem::path& dir, const ParameterSet& params);

/// Throws CorruptionError on missing group files or header/shape mismatches,
/// naming the offending group.
ParameterSet load_checkpoint(const std::filesystem::path& dir);

}  // namespace iene::nets
