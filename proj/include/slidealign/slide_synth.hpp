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

#include "slidealign/image.hpp"
#include "slidealign/report_corpus.hpp"

namespace slidealign {

/// Colour and frequency statistics of one class's tissue texture.
struct TextureParams {
  double hue_lo = 0.0;  // degrees; tissue hue stays inside [hue_lo, hue_hi]
  double hue_hi = 30.0;
  double saturation = 0.5;
  double value = 0.8;
  double frequency = 4.0;  // noise cycles per 100 px
};

struct SynthClass {
  int class_id = 0;
  std::string organ;
  std::vector<std::string> finding_templates;
  std::string keyword;  // unique to the class; appears in every template
  int severity = 1;     // 1 benign, 2 pre-cancerous, 3 cancerous
  bool lateral = false; // paired organ; reports may carry a laterality token
  TextureParams texture;
};

struct SynthSpec {
  int n_cases = 0;
  std::vector<SynthClass> classes;
  std::map<AssociationCategory, double> slides_per_part{{AssociationCategory::Cat1, 1.0}};
  int multi_slide_count = 3;  // slides per part for Cat2/Cat3 parts
  int max_parts_per_case = 1;
  int width = 640;
  int height = 640;
  double mpp = 1.0;  // nominal microns per pixel, metadata only
  std::uint64_t seed = 13;
};

struct SynthCase {
  ReportDocument report;
  std::vector<SlideRecord> slides;
  std::vector<int> part_class;  // ground-truth class per part
};

/// Eight organ/finding classes with disjoint hue bands and three severity
/// tiers; the default corpus for desk experiments.
std::vector<SynthClass> default_classes(int n_classes = 8);
SynthSpec default_spec(int n_classes, int n_cases, std::uint64_t seed);

/// Throws InvalidSpec.
void validate(const SynthSpec& spec);

/// Case i depends only on (seed, i), so a corpus of n cases starts with the
/// corpus of k < n cases.
std::vector<SynthCase> generate_corpus(const SynthSpec& spec);

/// Canonical part text for a class and template: "<organ>, biopsy : <template>".
/// Each finding has two templates, with and without the closing period.
std::string part_text(const SynthClass& cls, std::size_t template_index);

/// White background (every channel >= 245) with class-coloured blobs.
RgbImage render_slide(const SynthSpec& spec, const SynthCase& c, const SlideRecord& slide);

/// Fraction of pixels whose saturation is >= 0.2 (rendered tissue).
double tissue_pixel_fraction(const RgbImage& img);

}  // namespace slidealign
