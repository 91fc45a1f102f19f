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

#include "slidealign/manifest.hpp"

#include <filesystem>

#include "json.hpp"
#include "slidealign/common.hpp"

namespace slidealign {

namespace fs = std::filesystem;

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["subcommand"] = subcommand;
  j["config_hash"] = config_hash;
  j["config_text"] = config_text;
  j["seeds"] = seeds;
  j["versions"] = versions;
  j["artifacts"] = nlohmann::ordered_json::array();
  for (const auto& a : artifacts) j["artifacts"].push_back({{"path", a.path}, {"crc32", a.crc32}});
  j["timings"] = timings;
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  RunManifest m;
  try {
    const auto j = nlohmann::json::parse(text);
    m.subcommand = j.at("subcommand");
    m.config_hash = j.at("config_hash");
    m.config_text = j.at("config_text");
    m.seeds = j.at("seeds").get<std::map<std::string, std::uint64_t>>();
    m.versions = j.at("versions").get<std::map<std::string, std::string>>();
    for (const auto& a : j.at("artifacts")) m.artifacts.push_back({a.at("path"), a.at("crc32")});
    m.timings = j.at("timings").get<std::map<std::string, double>>();
  } catch (const nlohmann::json::exception& e) {
    throw data_error("CorruptManifest", e.what());
  }
  return m;
}

void record_artifacts(RunManifest& m, const std::string& work_dir, const std::vector<std::string>& paths) {
  for (const auto& p : paths) m.artifacts.push_back({p, file_checksum((fs::path(work_dir) / p).string())});
}

std::string manifest_path(const std::string& work_dir, const std::string& subcommand) {
  return (fs::path(work_dir) / "manifests" / (subcommand + ".json")).string();
}

void write_manifest(const std::string& work_dir, const RunManifest& m) {
  fs::create_directories(fs::path(work_dir) / "manifests");
  write_text_file_atomic(manifest_path(work_dir, m.subcommand), m.to_json());
}

RunManifest read_manifest(const std::string& path) { return RunManifest::from_json(read_text_file(path)); }

std::vector<std::string> verify_manifest(const std::string& work_dir, const RunManifest& m) {
  std::vector<std::string> problems;
  for (const auto& a : m.artifacts) {
    const auto full = (fs::path(work_dir) / a.path).string();
    if (!fs::exists(full)) {
      problems.push_back("missing " + a.path);
    } else if (file_checksum(full) != a.crc32) {
      problems.push_back("checksum mismatch " + a.path);
    }
  }
  return problems;
}

}  // namespace slidealign
