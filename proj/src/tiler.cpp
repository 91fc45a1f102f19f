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

#include "slidealign/tiler.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include "slidealign/common.hpp"
#include "slidealign/serialize.hpp"

namespace slidealign {

namespace {

// Separable square min/max filter over a 0/1 bitmap. `outside` is the value
// assumed for pixels beyond the border; a negative value means "neutral"
// (the border never changes the result).
std::vector<std::uint8_t> square_filter(const std::vector<std::uint8_t>& in, int w, int h, int r,
                                        bool take_max, int outside) {
  if (r <= 0) return in;
  std::vector<std::uint8_t> tmp(in.size());
  std::vector<std::uint8_t> out(in.size());
  auto reduce = [&](std::uint8_t acc, std::uint8_t v) {
    return take_max ? std::max(acc, v) : std::min(acc, v);
  };
  const std::uint8_t init = take_max ? 0 : 1;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::uint8_t acc = init;
      for (int dx = -r; dx <= r; ++dx) {
        const int xx = x + dx;
        if (xx < 0 || xx >= w) {
          if (outside >= 0) acc = reduce(acc, static_cast<std::uint8_t>(outside));
          continue;
        }
        acc = reduce(acc, in[static_cast<std::size_t>(y) * w + xx]);
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::uint8_t acc = init;
      for (int dy = -r; dy <= r; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= h) {
          if (outside >= 0) acc = reduce(acc, static_cast<std::uint8_t>(outside));
          continue;
        }
        acc = reduce(acc, tmp[static_cast<std::size_t>(yy) * w + x]);
      }
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  return out;
}

}  // namespace

std::size_t TissueMask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

TissueMask tissue_mask(const RgbImage& image, const MaskParams& params) {
  TissueMask mask;
  mask.width = image.width;
  mask.height = image.height;
  mask.params = params;
  const std::size_t n = static_cast<std::size_t>(image.width) * image.height;
  std::vector<std::uint8_t> raw(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* p = &image.pixels[i * 3];
    const Hsv hsv = rgb_to_hsv(p[0], p[1], p[2]);
    const double intensity = (p[0] + p[1] + p[2]) / (3.0 * 255.0);
    raw[i] = hsv.s >= params.saturation_threshold && intensity < params.intensity_threshold;
  }
  const int w = image.width;
  const int h = image.height;
  auto closed = square_filter(square_filter(raw, w, h, params.closing_radius, true, -1), w, h,
                              params.closing_radius, false, -1);
  mask.bits = square_filter(closed, w, h, params.erosion_radius, false, 0);
  return mask;
}

std::vector<PatchCoord> tile(const TissueMask& mask, const TileGeometry& g) {
  if (mask.width < g.patch_px || mask.height < g.patch_px) {
    throw data_error("ImageTooSmall", "mask " + std::to_string(mask.width) + "x" +
                                          std::to_string(mask.height) + " is smaller than one patch");
  }
  const int w = mask.width;
  // Summed-area table with a zero first row/column.
  std::vector<std::uint32_t> sat(static_cast<std::size_t>(w + 1) * (mask.height + 1), 0);
  auto S = [&](int x, int y) -> std::uint32_t& { return sat[static_cast<std::size_t>(y) * (w + 1) + x]; };
  for (int y = 0; y < mask.height; ++y) {
    std::uint32_t row = 0;
    for (int x = 0; x < w; ++x) {
      row += mask.at(x, y) ? 1u : 0u;
      S(x + 1, y + 1) = S(x + 1, y) + row;
    }
  }
  const double area = static_cast<double>(g.patch_px) * g.patch_px;
  std::vector<PatchCoord> coords;
  for (int y = 0; y + g.patch_px <= mask.height; y += g.stride_px) {
    for (int x = 0; x + g.patch_px <= w; x += g.stride_px) {
      const std::uint32_t c = S(x + g.patch_px, y + g.patch_px) - S(x, y + g.patch_px) -
                              S(x + g.patch_px, y) + S(x, y);
      if (c > 0 && static_cast<double>(c) >= g.min_tissue_fraction * area) {
        coords.push_back({static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y)});
      }
    }
  }
  return coords;
}

std::vector<PatchCoord> sample_budget(const std::vector<PatchCoord>& coords, std::size_t budget,
                                      std::uint64_t seed) {
  if (budget == 0) throw config_error("InvalidBudget", "budget must be positive");
  if (coords.size() <= budget) return coords;
  // Selection sampling: each element is kept with probability
  // (still needed) / (still available), which yields a uniform subset in order.
  Rng rng(seed);
  std::vector<PatchCoord> out;
  out.reserve(budget);
  std::size_t needed = budget;
  for (std::size_t i = 0; i < coords.size() && needed > 0; ++i) {
    const std::size_t remaining = coords.size() - i;
    if (uniform_index(rng, remaining) < needed) {
      out.push_back(coords[i]);
      --needed;
    }
  }
  return out;
}

void write_patch_manifest(const std::string& path, const MaskParams& p,
                          const std::vector<PatchManifestRecord>& records) {
  std::ostringstream header;
  header << "# slidealign-patches v1\n"
         << "saturation_threshold=" << p.saturation_threshold << "\n"
         << "intensity_threshold=" << p.intensity_threshold << "\n"
         << "closing_radius=" << p.closing_radius << "\n"
         << "erosion_radius=" << p.erosion_radius << "\n"
         << "---\n";
  ByteWriter out;
  out.bytes(header.str());
  for (const auto& r : records) {
    out.u32(static_cast<std::uint32_t>(r.slide_id.size()));
    out.bytes(r.slide_id);
    out.u32(r.n_candidates);
    out.u32(static_cast<std::uint32_t>(r.coords.size()));
    for (const auto& c : r.coords) {
      out.u32(c.x);
      out.u32(c.y);
    }
  }
  write_text_file_atomic(path, out.buffer());
}

std::vector<PatchManifestRecord> read_patch_manifest(const std::string& path, MaskParams* params) {
  const std::string data = read_text_file(path);
  const std::string sentinel = "\n---\n";
  const auto end = data.find(sentinel);
  if (data.rfind("# slidealign-patches v1\n", 0) != 0 || end == std::string::npos) {
    throw data_error("CorruptManifest", path + " lacks a patch manifest header");
  }
  MaskParams p;
  std::istringstream hs(data.substr(0, end));
  std::string line;
  while (std::getline(hs, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "saturation_threshold") p.saturation_threshold = std::stod(val);
    else if (key == "intensity_threshold") p.intensity_threshold = std::stod(val);
    else if (key == "closing_radius") p.closing_radius = std::stoi(val);
    else if (key == "erosion_radius") p.erosion_radius = std::stoi(val);
  }
  if (params) *params = p;
  ByteReader in(std::string_view(data).substr(end + sentinel.size()), "CorruptManifest");
  std::vector<PatchManifestRecord> records;
  while (!in.done()) {
    PatchManifestRecord r;
    r.slide_id = in.bytes(in.u32());
    r.n_candidates = in.u32();
    const std::uint32_t n = in.u32();
    r.coords.resize(n);
    for (auto& c : r.coords) {
      c.x = in.u32();
      c.y = in.u32();
    }
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace slidealign
