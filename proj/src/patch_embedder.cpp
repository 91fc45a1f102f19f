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

#include "slidealign/patch_embedder.hpp"

#include <algorithm>

#include "slidealign/serialize.hpp"

namespace slidealign {

PatchEmbedder::PatchEmbedder(std::uint64_t seed) : seed_(seed) {
  Rng rng(seed);
  for (int i = 0; i < kStats; ++i) {
    for (int j = 0; j < kPatchEmbedDim; ++j) weights_(i, j) = standard_normal(rng);
  }
  for (int j = 0; j < kPatchEmbedDim; ++j) bias_(j) = 0.1 * standard_normal(rng);
}

Eigen::Matrix<double, 1, PatchEmbedder::kStats> PatchEmbedder::pooled_stats(const RgbImage& patch) {
  const std::size_t n = static_cast<std::size_t>(patch.width) * patch.height;
  double sr = 0, sg = 0, sb = 0, sl = 0, sl2 = 0, ss = 0, grad = 0;
  std::vector<double> lum(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* p = &patch.pixels[i * 3];
    sr += p[0];
    sg += p[1];
    sb += p[2];
    const double l = (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0;
    lum[i] = l;
    sl += l;
    sl2 += l * l;
    ss += rgb_to_hsv(p[0], p[1], p[2]).s;
  }
  std::size_t n_grad = 0;
  for (int y = 0; y < patch.height; ++y) {
    for (int x = 0; x < patch.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * patch.width + x;
      if (x + 1 < patch.width) { grad += std::fabs(lum[i + 1] - lum[i]); ++n_grad; }
      if (y + 1 < patch.height) { grad += std::fabs(lum[i + patch.width] - lum[i]); ++n_grad; }
    }
  }
  const double dn = n == 0 ? 1.0 : static_cast<double>(n);
  const double mean_l = sl / dn;
  Eigen::Matrix<double, 1, kStats> s;
  s << sr / (255.0 * dn), sg / (255.0 * dn), sb / (255.0 * dn),
      std::min(1.0, 2.0 * std::sqrt(std::max(0.0, sl2 / dn - mean_l * mean_l))),
      std::min(1.0, 8.0 * grad / static_cast<double>(std::max<std::size_t>(n_grad, 1))),
      ss / dn;
  return s;
}

RowVector<float> PatchEmbedder::embed(const RgbImage& patch) const {
  if (patch.width != kPatchPx || patch.height != kPatchPx ||
      patch.pixels.size() != static_cast<std::size_t>(kPatchPx) * kPatchPx * 3) {
    throw data_error("BadPatchShape", "expected a 224x224x3 patch, got " +
                                          std::to_string(patch.width) + "x" +
                                          std::to_string(patch.height));
  }
  const auto stats = pooled_stats(patch);
  const Eigen::Matrix<double, 1, kStats> centered = 2.0 * (stats.array() - 0.5).matrix();
  const Eigen::Matrix<double, 1, kPatchEmbedDim> z = centered * weights_ + bias_;
  return z.array().tanh().cast<float>().matrix();
}

PatchEmbedding PatchEmbedder::embed_patches(const std::string& slide_id,
                                            const std::vector<RgbImage>& patches,
                                            const std::vector<PatchCoord>& coords) const {
  if (patches.size() != coords.size()) {
    throw data_error("BadPatchShape", "patch and coordinate counts differ");
  }
  PatchEmbedding out;
  out.slide_id = slide_id;
  out.coords = coords;
  out.matrix.resize(static_cast<Eigen::Index>(patches.size()), kPatchEmbedDim);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    out.matrix.row(static_cast<Eigen::Index>(i)) = embed(patches[i]);
  }
  return out;
}

PatchEmbedding PatchEmbedder::embed_slide(const std::string& slide_id, const RgbImage& slide,
                                          const std::vector<PatchCoord>& coords) const {
  PatchEmbedding out;
  out.slide_id = slide_id;
  out.coords = coords;
  out.matrix.resize(static_cast<Eigen::Index>(coords.size()), kPatchEmbedDim);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const auto& c = coords[i];
    if (c.x + kPatchPx > static_cast<std::uint32_t>(slide.width) ||
        c.y + kPatchPx > static_cast<std::uint32_t>(slide.height)) {
      throw data_error("BadPatchShape", "patch window leaves the slide");
    }
    out.matrix.row(static_cast<Eigen::Index>(i)) =
        embed(slide.crop(static_cast<int>(c.x), static_cast<int>(c.y), kPatchPx, kPatchPx));
  }
  return out;
}

std::vector<std::pair<double, double>> grid_positions(const std::vector<PatchCoord>& coords,
                                                      int stride_px) {
  std::vector<std::pair<double, double>> out;
  out.reserve(coords.size());
  for (const auto& c : coords) {
    out.emplace_back(static_cast<double>(c.x) / stride_px, static_cast<double>(c.y) / stride_px);
  }
  return out;
}

MatrixF with_positions(const PatchEmbedding& emb) {
  return emb.matrix + pos_encode<float>(grid_positions(emb.coords), kPatchEmbedDim);
}

namespace {
constexpr char kMagic[4] = {'S', 'A', 'E', 'M'};
}

std::string encode_embeddings(const PatchEmbedding& emb) {
  if (static_cast<std::size_t>(emb.matrix.rows()) != emb.coords.size()) {
    throw data_error("BadPatchShape", "embedding rows and coords differ");
  }
  ByteWriter w;
  w.bytes(std::string_view(kMagic, 4));
  w.u16(kEmbeddingStoreVersion);
  w.u32(static_cast<std::uint32_t>(emb.matrix.rows()));
  w.u32(static_cast<std::uint32_t>(emb.matrix.cols()));
  for (Eigen::Index i = 0; i < emb.matrix.size(); ++i) w.f32(emb.matrix.data()[i]);
  for (const auto& c : emb.coords) {
    w.u32(c.x);
    w.u32(c.y);
  }
  w.u32(static_cast<std::uint32_t>(emb.slide_id.size()));
  w.bytes(emb.slide_id);
  std::string out = w.buffer();
  ByteWriter crc;
  crc.u32(crc32_of(out.data(), out.size()));
  return out + crc.buffer();
}

PatchEmbedding decode_embeddings(std::string_view bytes) {
  if (bytes.size() < 4 + 2 + 4 + 4 + 4 + 4 || bytes.substr(0, 4) != std::string_view(kMagic, 4)) {
    throw data_error("CorruptStore", "not an embedding store");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 4);
  ByteReader tail(bytes.substr(bytes.size() - 4), "CorruptStore");
  ByteReader in(body, "CorruptStore");
  in.bytes(4);
  const std::uint16_t version = in.u16();
  if (version != kEmbeddingStoreVersion) {
    throw data_error("VersionMismatch", "embedding store version " + std::to_string(version));
  }
  if (tail.u32() != crc32_of(body.data(), body.size())) {
    throw data_error("CorruptStore", "checksum mismatch");
  }
  const std::uint32_t n = in.u32();
  const std::uint32_t d = in.u32();
  PatchEmbedding emb;
  emb.matrix.resize(n, d);
  for (Eigen::Index i = 0; i < emb.matrix.size(); ++i) emb.matrix.data()[i] = in.f32();
  emb.coords.resize(n);
  for (auto& c : emb.coords) {
    c.x = in.u32();
    c.y = in.u32();
  }
  emb.slide_id = in.bytes(in.u32());
  if (!in.done()) throw data_error("CorruptStore", "trailing bytes");
  return emb;
}

void write_embeddings(const std::string& path, const PatchEmbedding& emb) {
  write_text_file_atomic(path, encode_embeddings(emb));
}

PatchEmbedding read_embeddings(const std::string& path) {
  return decode_embeddings(read_text_file(path));
}

}  // namespace slidealign
