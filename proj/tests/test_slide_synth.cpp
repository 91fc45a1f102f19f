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

#include <array>
#include <map>

#include "doctest.h"
#include "slidealign/report_corpus.hpp"
#include "slidealign/slide_synth.hpp"

using namespace slidealign;

namespace {

SynthSpec small_spec(int classes, int cases, std::uint64_t seed) {
  SynthSpec s = default_spec(classes, cases, seed);
  s.width = 448;
  s.height = 448;
  return s;
}

// Mean RGB over pixels with saturation >= 0.2.
std::array<double, 3> tissue_mean_rgb(const RgbImage& img) {
  std::array<double, 3> sum{0, 0, 0};
  double n = 0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const auto* p = img.at(x, y);
      if (rgb_to_hsv(p[0], p[1], p[2]).s < 0.2) continue;
      for (int c = 0; c < 3; ++c) sum[c] += p[c];
      ++n;
    }
  }
  for (auto& v : sum) v /= std::max(n, 1.0);
  return sum;
}

}  // namespace

TEST_CASE("one class, one case") {
  SynthSpec s = small_spec(1, 1, 3);
  const auto corpus = generate_corpus(s);
  REQUIRE(corpus.size() == 1);
  REQUIRE(corpus[0].slides.size() == 1);
  const auto parts = parse_report(corpus[0].report, RuleSet::defaults());
  REQUIRE(parts.size() == 1);
  bool matched = false;
  for (std::size_t t = 0; t < s.classes[0].finding_templates.size(); ++t) {
    matched |= parts[0].serialize() == part_text(s.classes[0], t);
  }
  CHECK(matched);
}

TEST_CASE("part text shape") {
  for (const auto& c : default_classes(8)) {
    for (std::size_t t = 0; t < c.finding_templates.size(); ++t) {
      const auto text = part_text(c, t);
      CHECK(text.rfind(c.organ + ", biopsy : ", 0) == 0);
      CHECK((t % 2 == 0) == (text.back() == '.'));
      CHECK(text.find(c.keyword) != std::string::npos);
    }
  }
}

TEST_CASE("generation is deterministic and commutes with subsetting") {
  const auto a = generate_corpus(small_spec(8, 40, 13));
  const auto b = generate_corpus(small_spec(8, 40, 13));
  const auto head = generate_corpus(small_spec(8, 15, 13));
  REQUIRE(a.size() == 40);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].report.raw_text == b[i].report.raw_text);
    CHECK(a[i].part_class == b[i].part_class);
  }
  for (std::size_t i = 0; i < head.size(); ++i) {
    CHECK(head[i].report.case_id == a[i].report.case_id);
    CHECK(head[i].report.raw_text == a[i].report.raw_text);
    CHECK(head[i].slides.size() == a[i].slides.size());
  }
  const auto s = small_spec(8, 40, 13);
  CHECK(render_slide(s, a[3], a[3].slides[0]) == render_slide(s, b[3], b[3].slides[0]));
}

TEST_CASE("all-Cat2 spec yields three slides per part and no clean pairs") {
  SynthSpec s = small_spec(4, 12, 5);
  s.slides_per_part = {{AssociationCategory::Cat2, 1.0}};
  s.multi_slide_count = 3;
  s.max_parts_per_case = 2;
  std::vector<PartRecord> parts;
  std::vector<SlideRecord> slides;
  for (const auto& c : generate_corpus(s)) {
    const auto p = parse_report(c.report, RuleSet::defaults());
    CHECK(c.slides.size() == 3 * p.size());
    parts.insert(parts.end(), p.begin(), p.end());
    slides.insert(slides.end(), c.slides.begin(), c.slides.end());
  }
  const auto sets = build_pair_sets(parts, slides);
  CHECK(sets.clean.empty());
  CHECK(sets.noisy.size() == slides.size());
  for (const auto& p : sets.noisy) CHECK(p.category == AssociationCategory::Cat2);
}

TEST_CASE("invalid specs") {
  auto code = [](SynthSpec s) {
    try {
      validate(s);
    } catch (const Error& e) {
      return e.code();
    }
    return std::string();
  };
  SynthSpec s = small_spec(2, 4, 1);
  CHECK(code(s).empty());
  SynthSpec small = s;
  small.width = 300;
  CHECK(code(small) == "InvalidSpec");
  SynthSpec probs = s;
  probs.slides_per_part = {{AssociationCategory::Cat1, 0.5}, {AssociationCategory::Cat2, 0.4}};
  CHECK(code(probs) == "InvalidSpec");
  SynthSpec none = s;
  none.classes.clear();
  CHECK(code(none) == "InvalidSpec");
}

TEST_CASE("rendered slides: white background, saturated blobs, hue inside the class band") {
  const SynthSpec s = small_spec(8, 16, 13);
  for (const auto& c : generate_corpus(s)) {
    for (const auto& sl : c.slides) {
      const auto img = render_slide(s, c, sl);
      const double f = tissue_pixel_fraction(img);
      CHECK(f > 0.0);
      CHECK(f < 1.0);
      const auto& cls = s.classes[static_cast<std::size_t>(c.part_class[static_cast<std::size_t>(sl.part_index)])];
      double hue_sum = 0, n = 0;
      for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
          const auto* p = img.at(x, y);
          const Hsv h = rgb_to_hsv(p[0], p[1], p[2]);
          if (h.s >= 0.2) {
            hue_sum += h.h;
            ++n;
          } else {
            // not tissue: background must be near-white
            CHECK_MESSAGE(std::min({p[0], p[1], p[2]}) >= 245, "pixel ", x, ",", y);
          }
        }
      }
      REQUIRE(n > 0);
      const double mean_hue = hue_sum / n;
      CHECK(mean_hue >= cls.texture.hue_lo);
      CHECK(mean_hue <= cls.texture.hue_hi);
    }
  }
}

TEST_CASE("nearest-mean-colour classifier separates the default classes") {
  const SynthSpec s = small_spec(8, 160, 29);
  const auto corpus = generate_corpus(s);
  std::map<int, std::array<double, 3>> sum;
  std::map<int, int> count;
  std::vector<std::pair<int, std::array<double, 3>>> samples;
  for (const auto& c : corpus) {
    for (const auto& sl : c.slides) {
      const int cls = c.part_class[static_cast<std::size_t>(sl.part_index)];
      samples.push_back({cls, tissue_mean_rgb(render_slide(s, c, sl))});
    }
  }
  // Means from the first half, accuracy on the second.
  const std::size_t half = samples.size() / 2;
  for (std::size_t i = 0; i < half; ++i) {
    for (int k = 0; k < 3; ++k) sum[samples[i].first][k] += samples[i].second[k];
    ++count[samples[i].first];
  }
  REQUIRE(count.size() == 8);
  int correct = 0;
  for (std::size_t i = half; i < samples.size(); ++i) {
    int best = -1;
    double best_d = 1e300;
    for (const auto& [cls, v] : sum) {
      double d = 0;
      for (int k = 0; k < 3; ++k) d += std::pow(samples[i].second[k] - v[k] / count[cls], 2);
      if (d < best_d) {
        best_d = d;
        best = cls;
      }
    }
    correct += best == samples[i].first;
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(samples.size() - half) >= 0.95);
}

TEST_CASE("default classes cover three severities with unique keywords") {
  const auto classes = default_classes(8);
  std::map<int, int> sev;
  std::map<std::string, int> kw;
  for (const auto& c : classes) {
    ++sev[c.severity];
    ++kw[c.keyword];
  }
  CHECK(sev.size() == 3);
  CHECK(kw.size() == classes.size());
  for (std::size_t i = 0; i < classes.size(); ++i) {
    for (std::size_t j = i + 1; j < classes.size(); ++j) {
      const bool disjoint = classes[i].texture.hue_hi < classes[j].texture.hue_lo ||
                            classes[j].texture.hue_hi < classes[i].texture.hue_lo;
      CHECK(disjoint);
    }
  }
}
