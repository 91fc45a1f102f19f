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
#include <vector>

#include "slidealign/langgraft.hpp"
#include "slidealign/qformer.hpp"
#include "slidealign/report_corpus.hpp"
#include "slidealign/slide_synth.hpp"
#include "slidealign/tiler.hpp"

namespace slidealign {

inline constexpr int kConfigSchemaVersion = 1;

struct SynthSettings {
  int classes = 8;
  int cases = 320;
  std::uint64_t seed = 13;
  int width = 640;
  int height = 640;
  int max_parts = 1;
  double cat1 = 1.0;
  double cat2 = 0.0;
  double cat3 = 0.0;
};

struct SplitSettings {
  SplitFractions fractions{0.8, 0.2, 0.0};
  std::uint64_t seed = 13;
};

struct TileSettings {
  MaskParams mask;
  TileGeometry geometry;
  std::uint64_t seed = 13;  // budget sampling
};

struct EvalSettings {
  double match_threshold = 0.985;
  int bootstrap_replicates = 1000;
  std::uint64_t bootstrap_seed = 0;
  int max_generation_len = 160;
};

/// Everything a run needs. Text form: `schema_version = 1` then `[section]`
/// headers and `key = value` lines; `#` starts a comment.
struct RunConfig {
  SynthSettings synth;
  SplitSettings split;
  TileSettings tile;
  std::uint64_t embed_seed = 0x9a7c4e1bULL;
  QFormerConfig stage1_model;
  TrainConfig stage1;
  DecoderConfig decoder;
  DecoderTrainConfig decoder_train;
  Stage2Config stage2;
  EvalSettings eval;

  RunConfig();

  /// Sets "section.key"; throws UnknownKey / BadValue (config errors).
  void set(const std::string& key, const std::string& value);
  std::vector<std::string> keys() const;
  std::string get(const std::string& key) const;

  /// Canonical text; parse(to_text()) reproduces the config exactly.
  std::string to_text() const;
  /// CRC-32 of to_text() as hex.
  std::string hash() const;

  SynthSpec synth_spec() const;
};

/// Applies a config text on top of `base`. Throws SchemaVersion when the
/// version line is missing or different, ParseError on malformed lines.
RunConfig parse_config(const std::string& text, RunConfig base = RunConfig());
RunConfig load_config(const std::string& path, RunConfig base = RunConfig());

/// Applies "section.key=value" overrides in order.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);

}  // namespace slidealign
