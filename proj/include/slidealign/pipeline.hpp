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
#include "slidealign/patch_embedder.hpp"
#include "slidealign/qformer.hpp"
#include "slidealign/report_corpus.hpp"
#include "slidealign/slide_synth.hpp"
#include "slidealign/tiler.hpp"

namespace slidealign {

/// One clean slide-text pair carried through tiling and patch embedding.
struct PreparedSlide {
  PairedExample pair;
  int class_id = 0;
  int severity = 1;
  PatchEmbedding embedding;
};

/// In-memory synth -> parse -> pair -> split -> tile -> embed.
std::vector<PreparedSlide> prepare_synthetic(const SynthSpec& spec, const SplitFractions& fractions,
                                             std::uint64_t split_seed, const RuleSet& rules = RuleSet::defaults(),
                                             const MaskParams& mask = {}, const TileGeometry& geometry = {},
                                             const PatchEmbedder& embedder = PatchEmbedder());

/// Stage-1 examples of one split.
std::vector<TrainExample> training_examples(const std::vector<PreparedSlide>& slides, Split split);

/// Decoder pretraining texts of one split with their class severities.
std::vector<DecoderText> decoder_texts(const std::vector<PreparedSlide>& slides, Split split);

}  // namespace slidealign
