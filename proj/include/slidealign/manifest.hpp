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
#include <map>
#include <string>
#include <vector>

namespace slidealign {

struct ArtifactRecord {
  std::string path;  // relative to the work directory
  std::string crc32;
};

/// What one subcommand did: enough to rerun it and to check its outputs.
struct RunManifest {
  std::string subcommand;
  std::string config_hash;
  std::string config_text;
  std::map<std::string, std::uint64_t> seeds;
  std::map<std::string, std::string> versions;
  std::vector<ArtifactRecord> artifacts;
  std::map<std::string, double> timings;  // seconds

  std::string to_json() const;
  static RunManifest from_json(const std::string& text);  // CorruptManifest
};

/// Checksums every artifact (paths relative to `work_dir`).
void record_artifacts(RunManifest& m, const std::string& work_dir, const std::vector<std::string>& paths);

/// <work_dir>/manifests/<subcommand>.json, written atomically.
std::string manifest_path(const std::string& work_dir, const std::string& subcommand);
void write_manifest(const std::string& work_dir, const RunManifest& m);
RunManifest read_manifest(const std::string& path);

/// Problems found: missing artifacts and checksum mismatches.
std::vector<std::string> verify_manifest(const std::string& work_dir, const RunManifest& m);

}  // namespace slidealign
