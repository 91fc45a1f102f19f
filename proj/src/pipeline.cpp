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

#include "slidealign/pipeline.hpp"

#include <algorithm>
#include <map>

namespace slidealign {

std::vector<PreparedSlide> prepare_synthetic(const SynthSpec& spec, const SplitFractions& fractions,
                                             std::uint64_t split_seed, const RuleSet& rules, const MaskParams& mask,
                                             const TileGeometry& geometry, const PatchEmbedder& embedder) {
  const auto corpus = generate_corpus(spec);
  std::vector<PartRecord> parts;
  std::vector<SlideRecord> slides;
  std::map<std::string, const SynthCase*> by_case;
  for (const auto& c : corpus) {
    auto p = parse_report(c.report, rules);
    parts.insert(parts.end(), p.begin(), p.end());
    slides.insert(slides.end(), c.slides.begin(), c.slides.end());
    by_case[c.report.case_id] = &c;
  }
  auto pairs = build_pair_sets(parts, slides).clean;
  apply_split(pairs, split_cases(pairs, split_seed, fractions));

  std::map<std::string, const SlideRecord*> slide_by_id;
  for (const auto& s : slides) slide_by_id[s.slide_id] = &s;
  std::vector<PreparedSlide> out;
  for (auto& p : pairs) {
    const SlideRecord& sr = *slide_by_id.at(p.slide_id);
    const SynthCase& c = *by_case.at(sr.case_id);
    PreparedSlide ps;
    ps.class_id = c.part_class.at(static_cast<std::size_t>(sr.part_index));
    const auto cls = std::find_if(spec.classes.begin(), spec.classes.end(),
                                  [&](const SynthClass& k) { return k.class_id == ps.class_id; });
    ps.severity = cls->severity;
    const RgbImage img = render_slide(spec, c, sr);
    const auto coords = sample_budget(tile(tissue_mask(img, mask), geometry), geometry.budget, split_seed);
    if (coords.empty()) throw data_error("EmptyPatchSequence", "no tissue patches on " + sr.slide_id);
    ps.embedding = embedder.embed_slide(sr.slide_id, img, coords);
    ps.pair = std::move(p);
    out.push_back(std::move(ps));
  }
  return out;
}

std::vector<TrainExample> training_examples(const std::vector<PreparedSlide>& slides, Split split) {
  std::vector<TrainExample> out;
  for (const auto& s : slides) {
    if (s.pair.split != split) continue;
    out.push_back({s.pair.slide_id, with_positions(s.embedding), s.pair.text});
  }
  return out;
}

std::vector<DecoderText> decoder_texts(const std::vector<PreparedSlide>& slides, Split split) {
  std::vector<DecoderText> out;
  for (const auto& s : slides) {
    if (s.pair.split == split) out.push_back({s.pair.text, s.severity});
  }
  return out;
}

}  // namespace slidealign
