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

#include "slidealign/image.hpp"

namespace slidealign {

struct MaskParams {
  double saturation_threshold = 0.07;
  double intensity_threshold = 0.9;  // mean(R,G,B)/255 must be below this
  int closing_radius = 4;
  int erosion_radius = 2;
};

struct TissueMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;  // row-major, 1 = tissue
  MaskParams params;

  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  std::size_t count() const;
};

struct PatchCoord {
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  auto operator<=>(const PatchCoord&) const = default;
};

struct TileGeometry {
  int patch_px = 224;
  int stride_px = 192;
  std::size_t budget = 10240;
  double min_tissue_fraction = 0.05;
};

/// Patches overlap by exactly 32 px.
inline constexpr int kPatchPx = 224;
inline constexpr int kStridePx = 192;
inline constexpr int kPatchOverlapPx = 32;
inline constexpr std::size_t kPatchBudget = 10240;
static_assert(kPatchPx - kStridePx == kPatchOverlapPx);

/// Pixel is tissue iff saturation >= threshold and mean intensity below the
/// white threshold, followed by a square closing (border-neutral) and a
/// square erosion that treats pixels outside the image as background.
TissueMask tissue_mask(const RgbImage& image, const MaskParams& params = {});

/// Grid positions on the stride lattice whose full window fits in the image
/// and holds at least min_tissue_fraction tissue pixels, in row-major order.
/// Throws ImageTooSmall.
std::vector<PatchCoord> tile(const TissueMask& mask, const TileGeometry& geometry = {});

/// All coords when within budget, otherwise a uniform sample without
/// replacement of exactly `budget` coords in their original order.
std::vector<PatchCoord> sample_budget(const std::vector<PatchCoord>& coords, std::size_t budget,
                                      std::uint64_t seed);

struct PatchManifestRecord {
  std::string slide_id;
  std::uint32_t n_candidates = 0;
  std::vector<PatchCoord> coords;  // n_sampled == coords.size()
};

/// Text header ("# slidealign-patches v1" plus the four mask parameters,
/// terminated by a "---" line) followed by little-endian binary records:
/// u32 id length, id bytes, u32 n_candidates, u32 n_sampled, n_sampled
/// (u32 x, u32 y) pairs.
void write_patch_manifest(const std::string& path, const MaskParams& params,
                          const std::vector<PatchManifestRecord>& records);
std::vector<PatchManifestRecord> read_patch_manifest(const std::string& path,
                                                     MaskParams* params = nullptr);

}  // namespace slidealign
