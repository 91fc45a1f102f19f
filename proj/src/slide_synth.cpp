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

#include "slidealign/slide_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace slidealign {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_string(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

struct ClassText {
  const char* organ;
  const char* finding;
  const char* keyword;
  int severity;
  bool lateral;
};

// Findings are long enough that the with/without-period variants of one
// class score above the 0.985 match threshold under the n-gram oracle.
constexpr ClassText kClassTexts[] = {
    {"duodenum", "unremarkable intestinal mucosa with preserved villous architecture",
     "intestinal", 1, false},
    {"colon", "tubular adenoma with low grade dysplasia in polypoid fragments", "tubular adenoma", 2,
     false},
    {"colon", "invasive moderately differentiated adenocarcinoma arising in colonic mucosa",
     "adenocarcinoma", 3, false},
    {"skin", "seborrheic keratosis with hyperkeratosis and pseudo horn cysts", "keratosis", 1,
     false},
    {"cervix", "high grade squamous intraepithelial lesion involving endocervical glands",
     "intraepithelial", 2, false},
    {"stomach", "chronic gastritis with mild activity, negative for helicobacter organisms",
     "gastritis", 1, false},
    {"lung", "squamous cell carcinoma, moderately differentiated, with focal necrosis",
     "squamous cell", 3, true},
    {"breast", "invasive ductal carcinoma with associated ductal carcinoma in situ", "ductal", 3,
     true},
};

std::vector<AssociationCategory> category_order(const SynthSpec& spec) {
  std::vector<AssociationCategory> cats;
  for (const auto& [c, p] : spec.slides_per_part) {
    if (p > 0.0) cats.push_back(c);
  }
  return cats;
}

}  // namespace

std::vector<SynthClass> default_classes(int n_classes) {
  constexpr int kAvailable = static_cast<int>(std::size(kClassTexts));
  if (n_classes < 1 || n_classes > kAvailable) {
    throw config_error("InvalidSpec", "default corpus supports 1.." + std::to_string(kAvailable) +
                                          " classes");
  }
  std::vector<SynthClass> out;
  for (int k = 0; k < n_classes; ++k) {
    const auto& t = kClassTexts[k];
    SynthClass c;
    c.class_id = k;
    c.organ = t.organ;
    c.finding_templates = {std::string(t.finding) + ".", std::string(t.finding)};
    c.keyword = t.keyword;
    c.severity = t.severity;
    c.lateral = t.lateral;
    c.texture.hue_lo = k * 45.0 + 8.0;
    c.texture.hue_hi = k * 45.0 + 37.0;
    c.texture.saturation = 0.45 + 0.05 * (k % 3);
    c.texture.value = 0.75 + 0.05 * (k % 2);
    c.texture.frequency = 2.0 + k;
    out.push_back(std::move(c));
  }
  return out;
}

SynthSpec default_spec(int n_classes, int n_cases, std::uint64_t seed) {
  SynthSpec spec;
  spec.n_cases = n_cases;
  spec.classes = default_classes(n_classes);
  spec.seed = seed;
  return spec;
}

void validate(const SynthSpec& spec) {
  auto fail = [](const std::string& why) { throw config_error("InvalidSpec", why); };
  if (spec.n_cases < 1) fail("n_cases must be >= 1");
  if (spec.classes.empty()) fail("no classes");
  if (spec.width < 448 || spec.height < 448) fail("image must be at least 448x448");
  if (spec.max_parts_per_case < 1) fail("max_parts_per_case must be >= 1");
  if (spec.multi_slide_count < 2) fail("multi_slide_count must be >= 2");
  double total = 0.0;
  for (const auto& [c, p] : spec.slides_per_part) {
    if (p < 0.0) fail("negative category probability");
    total += p;
  }
  if (std::fabs(total - 1.0) > 1e-9) fail("category probabilities must sum to 1");
  for (const auto& c : spec.classes) {
    if (c.finding_templates.empty()) fail("class " + std::to_string(c.class_id) + " has no templates");
    if (c.organ.empty()) fail("class " + std::to_string(c.class_id) + " has no organ");
    const auto& t = c.texture;
    if (!(t.hue_lo >= 0.0 && t.hue_lo < t.hue_hi && t.hue_hi < 360.0)) fail("bad hue range");
    if (t.saturation < 0.25 || t.saturation > 0.8) fail("saturation must be in [0.25, 0.8]");
    if (t.value < 0.3 || t.value > 0.85) fail("value must be in [0.3, 0.85]");
  }
}

std::string part_text(const SynthClass& cls, std::size_t template_index) {
  return cls.organ + ", biopsy : " + cls.finding_templates.at(template_index);
}

std::vector<SynthCase> generate_corpus(const SynthSpec& spec) {
  validate(spec);
  const auto cats = category_order(spec);
  std::vector<SynthCase> corpus;
  corpus.reserve(static_cast<std::size_t>(spec.n_cases));
  for (int i = 0; i < spec.n_cases; ++i) {
    Rng rng(splitmix64(spec.seed ^ splitmix64(static_cast<std::uint64_t>(i) + 1)));
    SynthCase c;
    char id[16];
    std::snprintf(id, sizeof id, "C%05d", i);
    c.report.case_id = id;
    const int n_parts = 1 + static_cast<int>(uniform_index(rng, spec.max_parts_per_case));
    std::string text;
    for (int p = 0; p < n_parts; ++p) {
      const auto& cls = spec.classes[uniform_index(rng, spec.classes.size())];
      const auto tmpl = uniform_index(rng, cls.finding_templates.size());
      c.part_class.push_back(cls.class_id);

      std::string label = cls.organ + ", biopsy";
      if (cls.lateral && uniform_real(rng) < 0.3) {
        label = (uniform_real(rng) < 0.5 ? "left " : "right ") + label;
      }
      text += std::string(1, static_cast<char>('a' + p)) + ". " + label + " : " +
              cls.finding_templates[tmpl] + "\n";

      double u = uniform_real(rng);
      AssociationCategory cat = cats.back();
      for (auto candidate : cats) {
        const double prob = spec.slides_per_part.at(candidate);
        if (u < prob) {
          cat = candidate;
          break;
        }
        u -= prob;
      }
      const int n_slides = cat == AssociationCategory::Cat1 ? 1 : spec.multi_slide_count;
      for (int s = 0; s < n_slides; ++s) {
        const int block = cat == AssociationCategory::Cat3 ? s % 2 : 0;
        SlideRecord sr;
        sr.case_id = c.report.case_id;
        sr.part_index = p;
        sr.block_index = block;
        sr.slide_id = c.report.case_id + "-p" + std::to_string(p) + "-b" + std::to_string(block) +
                      "-s" + std::to_string(s);
        sr.image_uri = "images/" + sr.slide_id + ".png";
        c.slides.push_back(std::move(sr));
      }
    }
    c.report.raw_text = text;
    corpus.push_back(std::move(c));
  }
  return corpus;
}

RgbImage render_slide(const SynthSpec& spec, const SynthCase& c, const SlideRecord& slide) {
  if (slide.case_id != c.report.case_id || slide.part_index < 0 ||
      slide.part_index >= static_cast<int>(c.part_class.size())) {
    throw data_error("ForeignSlide", "slide " + slide.slide_id + " is not part of " + c.report.case_id);
  }
  const int class_id = c.part_class[static_cast<std::size_t>(slide.part_index)];
  const auto it = std::find_if(spec.classes.begin(), spec.classes.end(),
                               [&](const SynthClass& k) { return k.class_id == class_id; });
  if (it == spec.classes.end()) throw data_error("InvalidSpec", "unknown class");
  const TextureParams& tex = it->texture;

  Rng rng(splitmix64(spec.seed ^ hash_string(slide.slide_id)));
  const int w = spec.width;
  const int h = spec.height;
  const double short_side = std::min(w, h);

  struct Blob { double cx, cy, inv2s2; };
  std::vector<Blob> blobs(2 + uniform_index(rng, 3));
  for (auto& b : blobs) {
    b.cx = w * (0.25 + 0.5 * uniform_real(rng));
    b.cy = h * (0.25 + 0.5 * uniform_real(rng));
    const double sigma = short_side * (0.08 + 0.08 * uniform_real(rng));
    b.inv2s2 = 1.0 / (2.0 * sigma * sigma);
  }
  struct Wave { double kx, ky, phase; };
  auto make_waves = [&] {
    std::vector<Wave> waves(4);
    for (auto& wv : waves) {
      const double angle = 6.283185307179586 * uniform_real(rng);
      const double f = tex.frequency * (0.8 + 0.4 * uniform_real(rng)) / 100.0 * 6.283185307179586;
      wv = {f * std::cos(angle), f * std::sin(angle), 6.283185307179586 * uniform_real(rng)};
    }
    return waves;
  };
  const auto hue_waves = make_waves();
  const auto tone_waves = make_waves();
  auto noise = [](const std::vector<Wave>& waves, double x, double y) {
    double s = 0.0;
    for (const auto& wv : waves) s += std::cos(wv.kx * x + wv.ky * y + wv.phase);
    return s / static_cast<double>(waves.size());
  };

  const double hue_center = 0.5 * (tex.hue_lo + tex.hue_hi);
  const double hue_half = 0.5 * (tex.hue_hi - tex.hue_lo) * 0.85;
  RgbImage img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double field = 0.0;
      for (const auto& b : blobs) {
        const double dx = x - b.cx;
        const double dy = y - b.cy;
        field += std::exp(-(dx * dx + dy * dy) * b.inv2s2);
      }
      std::uint8_t* px = img.at(x, y);
      if (field > 0.5) {
        const double n1 = noise(hue_waves, x, y);
        const double n2 = noise(tone_waves, x, y);
        const Hsv hsv{hue_center + hue_half * n1, std::clamp(tex.saturation * (1.0 + 0.2 * n2), 0.25, 1.0),
                      std::clamp(tex.value * (1.0 - 0.1 * n2), 0.0, 0.95)};
        hsv_to_rgb(hsv, px[0], px[1], px[2]);
      } else {
        const auto v = static_cast<std::uint8_t>(246 + uniform_index(rng, 10));
        px[0] = px[1] = px[2] = v;
      }
    }
  }
  return img;
}

double tissue_pixel_fraction(const RgbImage& img) {
  std::size_t n = 0;
  const std::size_t total = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < total; ++i) {
    const auto* p = &img.pixels[i * 3];
    if (rgb_to_hsv(p[0], p[1], p[2]).s >= 0.2) ++n;
  }
  return total == 0 ? 0.0 : static_cast<double>(n) / static_cast<double>(total);
}

}  // namespace slidealign
