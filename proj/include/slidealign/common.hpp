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

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace slidealign {

/// Dense row-major matrix, the storage type for every embedding and
/// parameter block in the project.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

/// Coarse error classes; the CLI maps them onto exit codes 2/3/4.
enum class ErrorKind { Config, Data, Numeric };

/// Every module error carries a stable machine-readable code such as
/// "NoPartIndicators" or "CorruptStore".
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string code, const std::string& detail)
      : std::runtime_error(code + ": " + detail), kind_(kind), code_(std::move(code)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& code() const noexcept { return code_; }

 private:
  ErrorKind kind_;
  std::string code_;
};

inline Error data_error(std::string code, const std::string& detail) {
  return Error(ErrorKind::Data, std::move(code), detail);
}
inline Error config_error(std::string code, const std::string& detail) {
  return Error(ErrorKind::Config, std::move(code), detail);
}
inline Error numeric_error(std::string code, const std::string& detail) {
  return Error(ErrorKind::Numeric, std::move(code), detail);
}

using Rng = std::mt19937_64;

/// Uniform integer in [0, n) by rejection; unlike std::uniform_int_distribution
/// the draw sequence is fixed across standard library implementations.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  if (n <= 1) return 0;
  const std::uint64_t limit = Rng::max() - (Rng::max() % n) - 1;
  std::uint64_t r = rng();
  while (r > limit) r = rng();
  return r % n;
}

/// Uniform real in [0, 1) with 53 random bits.
inline double uniform_real(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Standard normal via Box-Muller (one draw per call).
inline double standard_normal(Rng& rng) {
  double u1 = uniform_real(rng);
  while (u1 <= 0.0) u1 = uniform_real(rng);
  const double u2 = uniform_real(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

template <typename T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[uniform_index(rng, i)]);
  }
}

/// Lowercase ASCII and collapse runs of whitespace to one space; trims ends.
std::string normalize_whitespace_lower(std::string_view s);

std::string trim(std::string_view s);

/// CRC-32 (IEEE) of a byte range.
std::uint32_t crc32_of(const void* data, std::size_t n);

/// CRC-32 of a file's bytes as 8 hex digits; throws IoError.
std::string file_checksum(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file_atomic(const std::string& path, std::string_view contents);

}  // namespace slidealign
