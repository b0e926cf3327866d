// Copyright 2026 The sparsecoll Authors
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

// Bucketed stochastic quantization of dense vectors.
//
// The input is cut into buckets of B consecutive values (the last one may be
// shorter). Each bucket stores its max-norm as an F32 scale and one
// sign+magnitude code per value: the top bit of a `bits`-wide code is the
// sign, the remaining bits hold a level in [0, s] with s = 2^(bits-1) - 1.
// Levels are drawn by stochastic rounding of |v| * s / scale, so decoding is
// unbiased. Codes are packed LSB-first; a bucket occupies
// ceil(len * bits / 8) bytes.
//
// Wire format (little-endian):
//   u8 0x02, u32 N, u8 bits, u32 B, then per bucket: f32 scale, packed codes.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "sparsecoll/error.hpp"
#include "sparsecoll/sparse_stream.hpp"
#include "sparsecoll/wire.hpp"

namespace sparsecoll {

struct QuantizationScheme {
  int bits = 4;
  std::uint32_t bucket_size = 1024;
  std::uint64_t seed = 0;

  std::uint32_t levels() const { return (1u << (bits - 1)) - 1; }

  void validate() const {
    detail::require(bits == 2 || bits == 4 || bits == 8, "quantization bits must be 2, 4 or 8");
    detail::require(bucket_size >= 1, "quantization bucket size must be positive");
  }

  friend bool operator==(const QuantizationScheme&, const QuantizationScheme&) = default;
};

struct QuantizedBlock {
  float scale = 0.0f;
  std::uint32_t length = 0;
  Bytes codes;
};

inline std::size_t packed_code_bytes(std::size_t length, int bits) {
  return (length * static_cast<std::size_t>(bits) + 7) / 8;
}

inline std::size_t bucket_count(std::size_t n, std::uint32_t bucket_size) {
  return (n + bucket_size - 1) / bucket_size;
}

inline constexpr std::size_t kQuantizedHeaderBytes = 1 + 4 + 1 + 4;

// Exact size of the quantized wire encoding of n values.
inline std::size_t quantized_encoded_size(std::size_t n, const QuantizationScheme& scheme) {
  scheme.validate();
  std::size_t total = kQuantizedHeaderBytes;
  for (std::size_t begin = 0; begin < n; begin += scheme.bucket_size) {
    const auto len = std::min<std::size_t>(scheme.bucket_size, n - begin);
    total += sizeof(float) + packed_code_bytes(len, scheme.bits);
  }
  return total;
}

namespace detail {

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline std::uint8_t read_code(std::span<const std::uint8_t> codes, std::size_t i, int bits) {
  const auto bit = i * static_cast<std::size_t>(bits);
  const auto mask = static_cast<std::uint8_t>((1u << bits) - 1);
  return static_cast<std::uint8_t>((codes[bit / 8] >> (bit % 8)) & mask);
}

}  // namespace detail

template <Scalar T>
std::vector<QuantizedBlock> quantize(std::span<const T> values, const QuantizationScheme& scheme,
                                     std::mt19937_64& rng) {
  scheme.validate();
  detail::require(!values.empty(), "quantize: empty input");
  const auto s = scheme.levels();
  const auto sign_bit = static_cast<std::uint8_t>(1u << (scheme.bits - 1));

  std::vector<QuantizedBlock> blocks;
  blocks.reserve(bucket_count(values.size(), scheme.bucket_size));
  for (std::size_t begin = 0; begin < values.size(); begin += scheme.bucket_size) {
    const auto len = std::min<std::size_t>(scheme.bucket_size, values.size() - begin);
    auto bucket = values.subspan(begin, len);

    double max_abs = 0.0;
    for (T v : bucket) {
      if (!std::isfinite(v)) throw InvalidArgument("quantize: non-finite input value");
      max_abs = std::max(max_abs, std::abs(static_cast<double>(v)));
    }
    // The scale travels as F32; round it up so every |v| <= scale.
    auto scale = static_cast<float>(max_abs);
    if (static_cast<double>(scale) < max_abs)
      scale = std::nextafter(scale, std::numeric_limits<float>::infinity());

    QuantizedBlock block{scale, static_cast<std::uint32_t>(len),
                         Bytes(packed_code_bytes(len, scheme.bits), 0)};
    if (scale > 0.0f) {
      for (std::size_t i = 0; i < len; ++i) {
        const double v = static_cast<double>(bucket[i]);
        const double x = std::abs(v) * s / static_cast<double>(scale);
        const double floor_x = std::floor(x);
        auto level = static_cast<std::uint32_t>(floor_x);
        if (detail::uniform01(rng) < x - floor_x) ++level;
        level = std::min(level, s);
        auto code = static_cast<std::uint8_t>(level);
        if (v < 0.0 && level != 0) code |= sign_bit;
        const auto bit = i * static_cast<std::size_t>(scheme.bits);
        block.codes[bit / 8] |= static_cast<std::uint8_t>(code << (bit % 8));
      }
    }
    blocks.push_back(std::move(block));
  }
  return blocks;
}

template <Scalar T>
std::vector<QuantizedBlock> quantize(std::span<const T> values, const QuantizationScheme& scheme) {
  std::mt19937_64 rng(scheme.seed);
  return quantize(values, scheme, rng);
}

template <Scalar T>
std::vector<T> dequantize(std::span<const QuantizedBlock> blocks, const QuantizationScheme& scheme,
                          std::size_t n) {
  scheme.validate();
  if (blocks.size() != bucket_count(n, scheme.bucket_size))
    throw DecodeError("dequantize: bucket count does not match length");
  const double s = scheme.levels();
  const auto sign_bit = static_cast<std::uint8_t>(1u << (scheme.bits - 1));
  const auto level_mask = static_cast<std::uint8_t>(sign_bit - 1);

  std::vector<T> out;
  out.reserve(n);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& block = blocks[b];
    const auto expected_len = std::min<std::size_t>(scheme.bucket_size, n - b * scheme.bucket_size);
    if (block.length != expected_len || block.codes.size() != packed_code_bytes(expected_len, scheme.bits))
      throw DecodeError("dequantize: bucket length mismatch");
    if (!(block.scale >= 0.0f) || !std::isfinite(block.scale))
      throw DecodeError("dequantize: invalid bucket scale");
    for (std::size_t i = 0; i < block.length; ++i) {
      const auto code = detail::read_code(block.codes, i, scheme.bits);
      const double magnitude = (code & level_mask) / s * static_cast<double>(block.scale);
      out.push_back(static_cast<T>((code & sign_bit) ? -magnitude : magnitude));
    }
  }
  return out;
}

inline void write_quantized(std::span<const QuantizedBlock> blocks, const QuantizationScheme& scheme,
                            std::uint32_t n, Bytes& out) {
  ByteWriter w(out);
  w.put(kQuantizedFlag);
  w.put(n);
  w.put(static_cast<std::uint8_t>(scheme.bits));
  w.put(scheme.bucket_size);
  for (const auto& block : blocks) {
    w.put(block.scale);
    w.put_bytes(block.codes);
  }
}

struct QuantizedPayload {
  std::uint32_t n = 0;
  QuantizationScheme scheme;
  std::vector<QuantizedBlock> blocks;
};

inline QuantizedPayload read_quantized(ByteReader& r) {
  QuantizedPayload p;
  if (r.get<std::uint8_t>() != kQuantizedFlag) throw DecodeError("not a quantized payload");
  p.n = r.get<std::uint32_t>();
  p.scheme.bits = r.get<std::uint8_t>();
  p.scheme.bucket_size = r.get<std::uint32_t>();
  if (p.n == 0) throw DecodeError("quantized payload with zero length");
  try {
    p.scheme.validate();
  } catch (const InvalidArgument& e) {
    throw DecodeError(e.what());
  }
  const auto buckets = bucket_count(p.n, p.scheme.bucket_size);
  p.blocks.reserve(buckets);
  for (std::size_t b = 0; b < buckets; ++b) {
    QuantizedBlock block;
    block.length = static_cast<std::uint32_t>(
        std::min<std::size_t>(p.scheme.bucket_size, p.n - b * p.scheme.bucket_size));
    block.scale = r.get<float>();
    auto codes = r.get_bytes(packed_code_bytes(block.length, p.scheme.bits));
    block.codes.assign(codes.begin(), codes.end());
    p.blocks.push_back(std::move(block));
  }
  return p;
}

// Quantizes a stream's logical vector and writes the 0x02 wire form.
template <Scalar T>
Bytes quantize_stream(const SparseStream<T>& s, const QuantizationScheme& scheme,
                      std::mt19937_64& rng) {
  const auto dense = s.logical();
  const auto blocks = quantize<T>(dense, scheme, rng);
  Bytes out;
  out.reserve(quantized_encoded_size(dense.size(), scheme));
  write_quantized(blocks, scheme, s.dimension(), out);
  return out;
}

// Decodes a 0x02 payload into a dense stream.
template <Scalar T>
SparseStream<T> read_quantized_stream(ByteReader& r, StreamPolicy policy = {}, T fill = T{0}) {
  const auto p = read_quantized(r);
  return SparseStream<T>::from_dense(dequantize<T>(p.blocks, p.scheme, p.n), policy, fill);
}

template <Scalar T>
SparseStream<T> dequantize_stream(std::span<const std::uint8_t> bytes, StreamPolicy policy = {},
                                  T fill = T{0}) {
  ByteReader r(bytes);
  auto s = read_quantized_stream<T>(r, policy, fill);
  if (r.remaining() != 0) throw DecodeError("trailing bytes after quantized payload");
  return s;
}

}  // namespace sparsecoll
