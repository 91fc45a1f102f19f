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

#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "slidealign/patch_embedder.hpp"
#include "slidealign/slide_synth.hpp"
#include "support/temp_dir.hpp"

using namespace slidealign;

namespace {

std::string error_code(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

RgbImage solid(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  RgbImage img(224, 224);
  for (int y = 0; y < 224; ++y)
    for (int x = 0; x < 224; ++x) {
      auto* p = img.at(x, y);
      p[0] = r;
      p[1] = g;
      p[2] = b;
    }
  return img;
}

}  // namespace

TEST_CASE("embedding is a deterministic frozen map") {
  const PatchEmbedder e;
  Rng rng(2);
  RgbImage a(224, 224);
  for (auto& v : a.pixels) v = static_cast<std::uint8_t>(uniform_index(rng, 256));
  const RgbImage b = a;
  const auto ea = e.embed(a);
  CHECK(ea.size() == kPatchEmbedDim);
  CHECK((ea.array() == e.embed(b).array()).all());
  CHECK((ea.array() == PatchEmbedder().embed(a).array()).all());
  CHECK_FALSE((ea.array() == PatchEmbedder(99).embed(a).array()).all());

  const auto zero = e.embed(RgbImage(224, 224, 0));
  CHECK(zero.allFinite());
  CHECK(error_code([&] { e.embed(RgbImage(100, 224)); }) == "BadPatchShape");
}

TEST_CASE("pooled statistics are in [0, 1] and read the right channels") {
  const auto s = PatchEmbedder::pooled_stats(solid(255, 0, 0));
  CHECK(s(0) == doctest::Approx(1.0));
  CHECK(s(1) == doctest::Approx(0.0));
  CHECK(s(2) == doctest::Approx(0.0));
  CHECK(s(3) == doctest::Approx(0.0));  // flat luminance
  CHECK(s(4) == doctest::Approx(0.0));  // no gradients
  CHECK(s(5) == doctest::Approx(1.0));  // full saturation
  Rng rng(8);
  for (int t = 0; t < 10; ++t) {
    RgbImage img(224, 224);
    for (auto& v : img.pixels) v = static_cast<std::uint8_t>(uniform_index(rng, 256));
    const auto st = PatchEmbedder::pooled_stats(img);
    CHECK((st.array() >= 0.0).all());
    CHECK((st.array() <= 1.0).all());
  }
}

TEST_CASE("patches from hue-disjoint classes separate in embedding space") {
  SynthSpec spec = default_spec(8, 120, 4);
  const PatchEmbedder e;
  // two classes with disjoint hue bands
  std::map<int, std::vector<RowVector<double>>> by_class;
  for (const auto& c : generate_corpus(spec)) {
    const int cls = c.part_class[0];
    if (cls != 0 && cls != 4) continue;
    const auto img = render_slide(spec, c, c.slides[0]);
    for (int y = 0; y + 224 <= img.height && by_class[cls].size() < 100; y += 192)
      for (int x = 0; x + 224 <= img.width && by_class[cls].size() < 100; x += 192) {
        const auto patch = img.crop(x, y, 224, 224);
        if (tissue_pixel_fraction(patch) < 0.2) continue;
        by_class[cls].push_back(e.embed(patch).cast<double>());
      }
  }
  REQUIRE(by_class[0].size() >= 20);
  REQUIRE(by_class[4].size() >= 20);
  auto mean_dist = [](const auto& a, const auto& b, bool same) {
    double s = 0;
    long n = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = same ? i + 1 : 0; j < b.size(); ++j) {
        s += (a[i] - b[j]).norm();
        ++n;
      }
    return s / static_cast<double>(n);
  };
  const double within = 0.5 * (mean_dist(by_class[0], by_class[0], true) + mean_dist(by_class[4], by_class[4], true));
  const double between = mean_dist(by_class[0], by_class[4], false);
  CHECK(between > within);
}

TEST_CASE("positional encoding") {
  const auto zero = pos_encode<double>({{0.0, 0.0}});
  for (int i = 0; i < kPatchEmbedDim; ++i) CHECK(zero(0, i) == (i % 2 == 0 ? 0.0 : 1.0));

  const auto two = pos_encode<double>({{3.0, 1.0}, {3.0, 7.0}});
  CHECK((two.row(0).head(192).array() == two.row(1).head(192).array()).all());
  CHECK_FALSE((two.row(0).tail(192).array() == two.row(1).tail(192).array()).all());

  const auto p = pos_encode<double>({{192.0, 0.0}});
  CHECK(p(0, 0) == doctest::Approx(std::sin(192.0)).epsilon(1e-12));
  CHECK(p(0, 1) == doctest::Approx(std::cos(192.0)).epsilon(1e-12));
  // pair i = 5 of the x half uses 10000^(-2*5/192)
  const double f5 = std::pow(10000.0, -10.0 / 192.0);
  CHECK(p(0, 10) == doctest::Approx(std::sin(192.0 * f5)).epsilon(1e-12));
  CHECK(p(0, 11) == doctest::Approx(std::cos(192.0 * f5)).epsilon(1e-12));
  CHECK(p(0, 192) == 0.0);
  CHECK(p(0, 193) == 1.0);

  CHECK(error_code([] { pos_encode<double>({{-1.0, 0.0}}); }) == "NegativeCoordinate");
}

TEST_CASE("positional encoding is bounded and injective on a 53 x 53 grid") {
  std::vector<std::pair<double, double>> pos;
  for (int y = 0; y < 53; ++y)
    for (int x = 0; x < 53; ++x) pos.push_back({x, y});
  const auto m = pos_encode<double>(pos);
  CHECK(m.cwiseAbs().maxCoeff() <= 1.0);
  double min_dist = 1e300;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const Eigen::VectorXd d = (m.rowwise() - m.row(i)).rowwise().squaredNorm();
    for (Eigen::Index j = i + 1; j < m.rows(); ++j) min_dist = std::min(min_dist, d(j));
  }
  CHECK(min_dist > 1e-6);
}

TEST_CASE("grid positions and with_positions") {
  const auto g = grid_positions({{0, 0}, {384, 192}});
  CHECK(g[1].first == 2.0);
  CHECK(g[1].second == 1.0);
  PatchEmbedding emb;
  emb.matrix = MatrixF::Ones(2, kPatchEmbedDim);
  emb.coords = {{0, 0}, {384, 192}};
  const auto w = with_positions(emb);
  const MatrixF expected = emb.matrix + pos_encode<float>(g);
  CHECK((w.array() == expected.array()).all());
}

TEST_CASE("embedding store round trip and corruption") {
  testing_support::TempDir dir;
  Rng rng(1);
  PatchEmbedding emb;
  emb.slide_id = "C00001-p0-b0-s0";
  emb.matrix = MatrixF(3, kPatchEmbedDim);
  for (Eigen::Index i = 0; i < emb.matrix.size(); ++i) emb.matrix.data()[i] = static_cast<float>(standard_normal(rng));
  emb.coords = {{0, 0}, {192, 0}, {0, 192}};
  const auto path = dir.file("e.saem");
  write_embeddings(path, emb);
  const auto back = read_embeddings(path);
  CHECK(back.slide_id == emb.slide_id);
  CHECK(back.coords == emb.coords);
  CHECK((back.matrix.array() == emb.matrix.array()).all());

  const std::string bytes = encode_embeddings(emb);
  CHECK(error_code([&] { decode_embeddings(std::string_view(bytes).substr(0, bytes.size() - 9)); }) == "CorruptStore");
  std::string flipped = bytes;
  flipped[40] ^= 0x01;
  CHECK(error_code([&] { decode_embeddings(flipped); }) == "CorruptStore");
  std::string version = bytes;
  version[4] = 9;
  CHECK(error_code([&] { decode_embeddings(version); }) == "VersionMismatch");
}

TEST_CASE("full-budget store has the expected byte count") {
  PatchEmbedding emb;
  emb.slide_id = "big";
  emb.matrix = MatrixF::Constant(10240, kPatchEmbedDim, 0.25f);
  for (std::uint32_t i = 0; i < 10240; ++i) emb.coords.push_back({(i % 100) * 192, (i / 100) * 192});
  const auto bytes = encode_embeddings(emb);
  // magic 4 + version 2 + n 4 + d 4, payload, coords, id length 4 + id, crc 4
  const std::size_t expected = 4 + 2 + 4 + 4 + 10240ull * 384 * 4 + 10240ull * 8 + 4 + 3 + 4;
  CHECK(bytes.size() == expected);
  const auto back = decode_embeddings(bytes);
  CHECK((back.matrix.array() == emb.matrix.array()).all());
}
