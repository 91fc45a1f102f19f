// Copyright 2026 The slidealign Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "slidealign/autograd.hpp"

namespace slidealign {

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// A parameter set plus free-form JSON metadata (config, vocabulary, run
/// information).
struct Checkpoint {
  std::string meta_json;
  ParamSet<float> params;
};

/// "SACK", u16 version, u32 metadata length + metadata, u32 block count, then
/// per block u32 name length + name, u32 rows, u32 cols, f32 payload; CRC-32
/// of everything before it at the end.
std::string encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(std::string_view bytes);  // CorruptCheckpoint, VersionMismatch

void write_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::string& path);

/// CRC-32 over the names, shapes and values of every block whose name starts
/// with `prefix`, as 8 hex digits.
std::string params_checksum(const ParamSet<float>& params, const std::string& prefix = "");

}  // namespace slidealign
