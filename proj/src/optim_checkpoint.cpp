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

#include <cstdio>

#include "slidealign/checkpoint.hpp"
#include "slidealign/optim.hpp"
#include "slidealign/serialize.hpp"

namespace slidealign {

double warmup_cosine_lr(double base, long step, long warmup, long max_steps) {
  if (step < warmup) return base * static_cast<double>(step) / static_cast<double>(warmup);
  if (step >= max_steps) return 0.0;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(max_steps - warmup);
  return base * 0.5 * (1.0 + std::cos(3.141592653589793 * progress));
}

bool decays(const std::string& name) {
  if (name == "log_temp") return false;
  if (name.find(".ln") != std::string::npos || name.rfind("ln", 0) == 0) return false;
  const auto dot = name.rfind('.');
  const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
  return leaf.empty() || leaf[0] != 'b';
}

namespace {
constexpr char kMagic[4] = {'S', 'A', 'C', 'K'};
}

std::string encode_checkpoint(const Checkpoint& ck) {
  ByteWriter w;
  w.bytes(std::string_view(kMagic, 4));
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ck.meta_json.size()));
  w.bytes(ck.meta_json);
  w.u32(static_cast<std::uint32_t>(ck.params.blocks().size()));
  for (const auto& [name, m] : ck.params.blocks()) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) w.f32(m.data()[i]);
  }
  std::string out = w.buffer();
  ByteWriter crc;
  crc.u32(crc32_of(out.data(), out.size()));
  return out + crc.buffer();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 4 + 2 + 4 + 4 + 4 || bytes.substr(0, 4) != std::string_view(kMagic, 4)) {
    throw data_error("CorruptCheckpoint", "not a checkpoint");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 4);
  ByteReader in(body, "CorruptCheckpoint");
  in.bytes(4);
  const std::uint16_t version = in.u16();
  if (version != kCheckpointVersion) {
    throw data_error("VersionMismatch", "checkpoint version " + std::to_string(version));
  }
  ByteReader tail(bytes.substr(bytes.size() - 4), "CorruptCheckpoint");
  if (tail.u32() != crc32_of(body.data(), body.size())) {
    throw data_error("CorruptCheckpoint", "checksum mismatch");
  }
  Checkpoint ck;
  ck.meta_json = in.bytes(in.u32());
  const std::uint32_t n = in.u32();
  for (std::uint32_t b = 0; b < n; ++b) {
    const std::string name = in.bytes(in.u32());
    const std::uint32_t rows = in.u32();
    const std::uint32_t cols = in.u32();
    auto& m = ck.params.add(name, rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = in.f32();
  }
  if (!in.done()) throw data_error("CorruptCheckpoint", "trailing bytes");
  return ck;
}

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  write_text_file_atomic(path, encode_checkpoint(ck));
}

Checkpoint read_checkpoint(const std::string& path) { return decode_checkpoint(read_text_file(path)); }

std::string params_checksum(const ParamSet<float>& params, const std::string& prefix) {
  ByteWriter w;
  for (const auto& [name, m] : params.blocks()) {
    if (name.rfind(prefix, 0) != 0) continue;
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) w.f32(m.data()[i]);
  }
  char hex[9];
  std::snprintf(hex, sizeof hex, "%08x", crc32_of(w.buffer().data(), w.buffer().size()));
  return hex;
}

}  // namespace slidealign
