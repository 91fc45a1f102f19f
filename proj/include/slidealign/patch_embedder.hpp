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

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "slidealign/common.hpp"
#include "slidealign/image.hpp"
#include "slidealign/tiler.hpp"

namespace slidealign {

inline constexpr int kPatchEmbedDim = 384;
inline constexpr double kPosEncodingBase = 10000.0;

struct PatchEmbedding {
  MatrixF matrix;  // n_patches x 384
  std::vector<PatchCoord> coords;
  std::string slide_id;
};

/// Frozen stand-in patch encoder: six pooled colour/frequency statistics of a
/// 224x224 patch pushed through a fixed seeded linear map and tanh.
class PatchEmbedder {
 public:
  static constexpr int kStats = 6;

  explicit PatchEmbedder(std::uint64_t seed = 0x9a7c4e1bULL);

  /// mean R, mean G, mean B, luminance std, gradient energy, mean saturation;
  /// each in [0, 1].
  static Eigen::Matrix<double, 1, kStats> pooled_stats(const RgbImage& patch);

  /// Throws BadPatchShape unless the patch is 224x224.
  RowVector<float> embed(const RgbImage& patch) const;

  PatchEmbedding embed_patches(const std::string& slide_id, const std::vector<RgbImage>& patches,
                               const std::vector<PatchCoord>& coords) const;

  /// Crops each coordinate's window from the slide and embeds it.
  PatchEmbedding embed_slide(const std::string& slide_id, const RgbImage& slide,
                             const std::vector<PatchCoord>& coords) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  Eigen::Matrix<double, kStats, kPatchEmbedDim> weights_;
  Eigen::Matrix<double, 1, kPatchEmbedDim> bias_;
};

/// Sine/cosine encodings, first d/2 dims for x and last d/2 for y. Within an
/// axis, pair i holds sin(p / base^(2i/(d/2))) and cos of the same argument.
/// Positions are used as given; see grid_positions for the pixel mapping.
template <typename Scalar>
Matrix<Scalar> pos_encode(const std::vector<std::pair<double, double>>& positions,
                          int d = kPatchEmbedDim, double base = kPosEncodingBase) {
  if (d % 4 != 0) throw config_error("BadDimension", "pos_encode needs d divisible by 4");
  const int half = d / 2;
  Matrix<Scalar> out(static_cast<Eigen::Index>(positions.size()), d);
  for (std::size_t r = 0; r < positions.size(); ++r) {
    const auto [px, py] = positions[r];
    if (px < 0.0 || py < 0.0) throw data_error("NegativeCoordinate", "pos_encode needs p >= 0");
    for (int axis = 0; axis < 2; ++axis) {
      const double p = axis == 0 ? px : py;
      for (int i = 0; i < half / 2; ++i) {
        const double freq = std::pow(base, -2.0 * i / half);
        out(static_cast<Eigen::Index>(r), axis * half + 2 * i) = static_cast<Scalar>(std::sin(p * freq));
        out(static_cast<Eigen::Index>(r), axis * half + 2 * i + 1) = static_cast<Scalar>(std::cos(p * freq));
      }
    }
  }
  return out;
}

/// Pixel coordinates in patch-grid units (pixel / stride).
std::vector<std::pair<double, double>> grid_positions(const std::vector<PatchCoord>& coords,
                                                      int stride_px = kStridePx);

/// Embedding plus positional encoding of the grid positions, the Q-Former's
/// image-side input.
MatrixF with_positions(const PatchEmbedding& emb);

inline constexpr std::uint16_t kEmbeddingStoreVersion = 1;

/// "SAEM", u16 version, u32 n, u32 d, f32 row-major payload, u32 (x, y)
/// pairs, u32 id length + slide id, then CRC-32 of all preceding bytes.
std::string encode_embeddings(const PatchEmbedding& emb);
PatchEmbedding decode_embeddings(std::string_view bytes);  // CorruptStore, VersionMismatch
void write_embeddings(const std::string& path, const PatchEmbedding& emb);
PatchEmbedding read_embeddings(const std::string& path);

}  // namespace slidealign
