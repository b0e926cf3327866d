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

// Sparse streams: index/value vectors over a universe [0, N) that fall back
// to a dense buffer once the sparse encoding stops saving bytes.
//
// Wire format (little-endian):
//   u8  flag        0x00 sparse, 0x01 dense (0x02 is quantized, see
//                   quantization.hpp)
//   u32 dimension   N
//   sparse: u32 count, then count x (u32 index, value)
//   dense:  N x value
// Values are binary32 or binary64 depending on the stream's scalar type,
// which both sides agree on out of band.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sparsecoll/error.hpp"
#include "sparsecoll/wire.hpp"

namespace sparsecoll {

template <class T>
concept Scalar = std::same_as<T, float> || std::same_as<T, double>;

enum class Repr : std::uint8_t { Sparse = 0x00, Dense = 0x01 };

inline constexpr std::uint8_t kQuantizedFlag = 0x02;

enum class ValuePrecision { F32, F64 };

template <Scalar T>
constexpr ValuePrecision precision_of() {
  return sizeof(T) == 4 ? ValuePrecision::F32 : ValuePrecision::F64;
}

// Largest nnz for which (index, value) pairs are no larger than the dense
// buffer: floor(N * isize / (c + isize)). `isize` is bytes per value, `c`
// bytes per index and must be able to address N.
inline std::uint64_t switch_threshold(std::uint64_t n, std::uint32_t isize,
                                      std::uint32_t c) {
  detail::require(n > 0, "switch_threshold: dimension must be positive");
  detail::require(isize == 4 || isize == 8,
                  "switch_threshold: value size must be 4 or 8 bytes");
  const auto index_bits = static_cast<std::uint32_t>(std::bit_width(n - 1));
  detail::require(c >= (index_bits + 7) / 8,
                  "switch_threshold: index size too small for dimension");
  return n * isize / (static_cast<std::uint64_t>(c) + isize);
}

// Knobs shared by every stream taking part in one collective.
struct StreamPolicy {
  // Bytes per index in the volume model. The wire always uses u32.
  std::uint32_t index_bytes = 4;
  // Multiplies the byte-volume threshold; < 1 densifies earlier to account
  // for the extra cost of sparse summation.
  double threshold_scale = 1.0;

  friend bool operator==(const StreamPolicy&, const StreamPolicy&) = default;
};

template <Scalar T>
std::size_t effective_threshold(std::uint64_t n, const StreamPolicy& policy) {
  detail::require(policy.threshold_scale > 0.0,
                  "threshold scale must be positive");
  const auto base = switch_threshold(n, sizeof(T), policy.index_bytes);
  const double scaled = std::floor(static_cast<double>(base) * policy.threshold_scale);
  return static_cast<std::size_t>(std::min(scaled, static_cast<double>(n)));
}

template <Scalar T>
struct Entry {
  std::uint32_t index;
  T value;

  friend bool operator==(const Entry&, const Entry&) = default;
};

// Coordinate-wise associative operation with a two-sided neutral element.
template <Scalar T>
struct ReductionOp {
  using Fn = T (*)(T, T);

  Fn apply = nullptr;
  T neutral{};
  const char* name = "custom";

  T operator()(T a, T b) const { return apply(a, b); }

  static ReductionOp sum() {
    return {[](T a, T b) { return a + b; }, T{0}, "sum"};
  }
  static ReductionOp prod() {
    return {[](T a, T b) { return a * b; }, T{1}, "prod"};
  }
  static ReductionOp max() {
    return {[](T a, T b) { return std::max(a, b); },
            -std::numeric_limits<T>::infinity(), "max"};
  }
  static ReductionOp min() {
    return {[](T a, T b) { return std::min(a, b); },
            std::numeric_limits<T>::infinity(), "min"};
  }
};

// Half-open index interval [begin, end).
struct IndexRange {
  std::uint32_t begin = 0;
  std::uint32_t end = 0;

  std::uint32_t size() const { return end - begin; }
  bool contains(std::uint32_t i) const { return i >= begin && i < end; }
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

// Splits [0, n) over `parts` owners: owners 0..parts-2 get floor(n/parts)
// indices, the last owner takes the remainder.
inline std::vector<IndexRange> partition_ranges(std::uint32_t n, int parts) {
  detail::require(parts >= 1, "partition_ranges: need at least one part");
  const auto p = static_cast<std::uint32_t>(parts);
  const auto base = n / p;
  std::vector<IndexRange> out(p);
  for (std::uint32_t i = 0; i < p; ++i) out[i] = {i * base, i + 1 == p ? n : (i + 1) * base};
  return out;
}

template <Scalar T>
class SparseStream {
 public:
  using value_type = T;

  SparseStream() = default;

  static SparseStream empty(std::uint32_t n, StreamPolicy policy = {}, T fill = T{0}) {
    return SparseStream(n, policy, fill);
  }

  // Entries must have strictly increasing indices below n. Densifies when the
  // count exceeds the switch threshold.
  static SparseStream from_entries(std::uint32_t n, std::vector<Entry<T>> entries,
                                   StreamPolicy policy = {}, T fill = T{0}) {
    SparseStream s(n, policy, fill);
    for (std::size_t i = 0; i < entries.size(); ++i) {
      detail::require(entries[i].index < n, "sparse entry index out of range");
      detail::require(i == 0 || entries[i - 1].index < entries[i].index,
                      "sparse entry indices must be strictly increasing");
    }
    s.entries_ = std::move(entries);
    if (s.entries_.size() > s.threshold_) s.densify(fill);
    return s;
  }

  static SparseStream from_dense(std::vector<T> values, StreamPolicy policy = {},
                                 T fill = T{0}) {
    detail::require(!values.empty(), "dense stream needs at least one value");
    detail::require(values.size() <= std::numeric_limits<std::uint32_t>::max(),
                    "dimension exceeds u32 index space");
    SparseStream s(static_cast<std::uint32_t>(values.size()), policy, fill);
    s.repr_ = Repr::Dense;
    s.values_ = std::move(values);
    return s;
  }

  // Keeps every coordinate that differs from `fill`.
  static SparseStream sparsify(std::span<const T> values, StreamPolicy policy = {},
                               T fill = T{0}) {
    std::vector<Entry<T>> entries;
    for (std::size_t i = 0; i < values.size(); ++i)
      if (values[i] != fill) entries.push_back({static_cast<std::uint32_t>(i), values[i]});
    if (values.empty()) return empty(0, policy, fill);
    return from_entries(static_cast<std::uint32_t>(values.size()), std::move(entries),
                        policy, fill);
  }

  std::uint32_t dimension() const { return dimension_; }
  Repr repr() const { return repr_; }
  bool is_sparse() const { return repr_ == Repr::Sparse; }
  bool is_dense() const { return repr_ == Repr::Dense; }
  std::span<const Entry<T>> entries() const { return entries_; }
  std::span<const T> values() const { return values_; }
  std::span<T> mutable_values() { return values_; }
  const StreamPolicy& policy() const { return policy_; }
  std::size_t threshold() const { return threshold_; }
  T fill() const { return fill_; }

  // Pairs held in sparse form, or N once dense.
  std::size_t stored_count() const {
    return is_sparse() ? entries_.size() : values_.size();
  }

  // Coordinates that differ from the fill value.
  std::size_t count_non_fill() const {
    if (is_sparse())
      return static_cast<std::size_t>(std::count_if(
          entries_.begin(), entries_.end(), [&](const Entry<T>& e) { return e.value != fill_; }));
    return static_cast<std::size_t>(
        std::count_if(values_.begin(), values_.end(), [&](T v) { return v != fill_; }));
  }

  std::vector<T> logical() const {
    if (is_dense()) return values_;
    std::vector<T> out(dimension_, fill_);
    for (const auto& e : entries_) out[e.index] = e.value;
    return out;
  }

  // Sparse -> dense with absent coordinates set to `fill`. No-op when dense.
  void densify(T fill) {
    if (is_dense()) return;
    fill_ = fill;
    values_.assign(dimension_, fill);
    for (const auto& e : entries_) values_[e.index] = e.value;
    entries_.clear();
    entries_.shrink_to_fit();
    repr_ = Repr::Dense;
  }
  void densify() { densify(fill_); }

  // Drops explicit entries equal to the fill value (e.g. cancelled sums).
  void compact() {
    if (is_dense()) return;
    std::erase_if(entries_, [&](const Entry<T>& e) { return e.value == fill_; });
  }

  friend bool operator==(const SparseStream& a, const SparseStream& b) {
    return a.dimension_ == b.dimension_ && a.repr_ == b.repr_ &&
           a.entries_ == b.entries_ && a.values_ == b.values_;
  }

 private:
  template <Scalar U>
  friend void reduce_into(SparseStream<U>&, const SparseStream<U>&, const ReductionOp<U>&);

  SparseStream(std::uint32_t n, StreamPolicy policy, T fill)
      : dimension_(n),
        policy_(policy),
        threshold_(n == 0 ? 0 : effective_threshold<T>(n, policy)),
        fill_(fill) {}

  std::uint32_t dimension_ = 0;
  Repr repr_ = Repr::Sparse;
  std::vector<Entry<T>> entries_;
  std::vector<T> values_;
  StreamPolicy policy_{};
  std::size_t threshold_ = 0;
  T fill_{};
};

// acc <- op(acc, other), coordinate-wise. Two sparse inputs densify when
// |H1| + |H2| exceeds the threshold (no exact union is computed). Exact-zero
// results of a merge are kept as entries. A dense accumulator stays dense.
template <Scalar T>
void reduce_into(SparseStream<T>& acc, const SparseStream<T>& other, const ReductionOp<T>& op) {
  detail::require(acc.dimension() == other.dimension(), "reduce: dimension mismatch");

  if (acc.is_sparse() && other.is_sparse()) {
    if (acc.entries_.size() + other.entries_.size() > acc.threshold_) {
      acc.densify(op.neutral);
    } else {
      std::vector<Entry<T>> merged;
      merged.reserve(acc.entries_.size() + other.entries_.size());
      auto a = acc.entries_.begin();
      auto b = other.entries_.begin();
      while (a != acc.entries_.end() && b != other.entries_.end()) {
        if (a->index < b->index) {
          merged.push_back(*a++);
        } else if (b->index < a->index) {
          merged.push_back(*b++);
        } else {
          merged.push_back({a->index, op(a->value, b->value)});
          ++a;
          ++b;
        }
      }
      merged.insert(merged.end(), a, acc.entries_.end());
      merged.insert(merged.end(), b, other.entries_.end());
      acc.entries_ = std::move(merged);
      acc.fill_ = op.neutral;
      return;
    }
  }

  if (acc.is_sparse()) {
    // Sparse + dense: start from the dense operand and fold the entries in.
    std::vector<T> values(other.values_.begin(), other.values_.end());
    for (const auto& e : acc.entries_) values[e.index] = op(e.value, values[e.index]);
    acc.entries_.clear();
    acc.values_ = std::move(values);
    acc.repr_ = Repr::Dense;
    acc.fill_ = op.neutral;
    return;
  }

  if (other.is_sparse()) {
    for (const auto& e : other.entries_) acc.values_[e.index] = op(acc.values_[e.index], e.value);
    return;
  }

  auto* out = acc.values_.data();
  const auto* in = other.values_.data();
  for (std::size_t i = 0, n = acc.values_.size(); i < n; ++i) out[i] = op(out[i], in[i]);
}

template <Scalar T>
SparseStream<T> sum_inplace(SparseStream<T> u1, const SparseStream<T>& u2,
                            const ReductionOp<T>& op = ReductionOp<T>::sum()) {
  reduce_into(u1, u2, op);
  return u1;
}

// A stream over a sub-range of a larger universe. `stream` uses local
// coordinates: its dimension equals range.size() and index i maps to
// range.begin + i globally.
template <Scalar T>
struct Segment {
  IndexRange range;
  SparseStream<T> stream;
};

// Restricts `s` to `range`, re-based to local coordinates. Dense stays dense.
template <Scalar T>
SparseStream<T> slice(const SparseStream<T>& s, IndexRange range) {
  detail::require(range.begin <= range.end && range.end <= s.dimension(),
                  "slice: range outside stream");
  if (range.size() == 0) return SparseStream<T>::empty(0, s.policy(), s.fill());
  if (s.is_dense()) {
    auto vals = s.values().subspan(range.begin, range.size());
    return SparseStream<T>::from_dense({vals.begin(), vals.end()}, s.policy(), s.fill());
  }
  auto entries = s.entries();
  auto lo = std::lower_bound(entries.begin(), entries.end(), range.begin,
                             [](const Entry<T>& e, std::uint32_t i) { return e.index < i; });
  auto hi = std::lower_bound(lo, entries.end(), range.end,
                             [](const Entry<T>& e, std::uint32_t i) { return e.index < i; });
  std::vector<Entry<T>> local;
  local.reserve(static_cast<std::size_t>(hi - lo));
  for (auto it = lo; it != hi; ++it) local.push_back({it->index - range.begin, it->value});
  return SparseStream<T>::from_entries(range.size(), std::move(local), s.policy(), s.fill());
}

// Places disjoint segments into one stream of dimension n. Gaps hold `fill`.
// The result is dense if any part is dense or the total entry count exceeds
// the threshold for n under `policy`.
template <Scalar T>
SparseStream<T> concat_disjoint(std::span<const Segment<T>> parts, std::uint32_t n,
                                StreamPolicy policy = {}, T fill = T{0}) {
  std::vector<const Segment<T>*> order;
  order.reserve(parts.size());
  for (const auto& p : parts) {
    detail::require(p.range.begin <= p.range.end && p.range.end <= n,
                    "concat_disjoint: range outside universe");
    detail::require(p.stream.dimension() == p.range.size(),
                    "concat_disjoint: segment dimension differs from its range");
    order.push_back(&p);
  }
  std::sort(order.begin(), order.end(),
            [](const Segment<T>* a, const Segment<T>* b) { return a->range.begin < b->range.begin; });
  std::size_t total = 0;
  bool any_dense = false;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i > 0 && order[i]->range.size() > 0 && order[i - 1]->range.end > order[i]->range.begin)
      throw InvalidArgument("concat_disjoint: overlapping ranges");
    total += order[i]->stream.is_sparse() ? order[i]->stream.entries().size() : 0;
    any_dense = any_dense || order[i]->stream.is_dense();
  }

  const auto limit = effective_threshold<T>(n, policy);
  if (any_dense || total > limit) {
    std::vector<T> values(n, fill);
    for (const auto* p : order) {
      const auto base = p->range.begin;
      if (p->stream.is_dense()) {
        std::copy(p->stream.values().begin(), p->stream.values().end(), values.begin() + base);
      } else {
        for (const auto& e : p->stream.entries()) values[base + e.index] = e.value;
      }
    }
    return SparseStream<T>::from_dense(std::move(values), policy, fill);
  }

  std::vector<Entry<T>> entries;
  entries.reserve(total);
  for (const auto* p : order)
    for (const auto& e : p->stream.entries()) entries.push_back({p->range.begin + e.index, e.value});
  return SparseStream<T>::from_entries(n, std::move(entries), policy, fill);
}

template <Scalar T>
std::size_t serialized_size(const SparseStream<T>& s) {
  constexpr std::size_t header = 1 + 4;
  if (s.is_dense()) return header + s.values().size() * sizeof(T);
  return header + 4 + s.entries().size() * (4 + sizeof(T));
}

template <Scalar T>
void serialize_into(const SparseStream<T>& s, Bytes& out) {
  out.reserve(out.size() + serialized_size(s));
  ByteWriter w(out);
  w.put(static_cast<std::uint8_t>(s.repr()));
  w.put(s.dimension());
  if (s.is_dense()) {
    w.put_array(s.values());
    return;
  }
  w.put(static_cast<std::uint32_t>(s.entries().size()));
  for (const auto& e : s.entries()) {
    w.put(e.index);
    w.put(e.value);
  }
}

template <Scalar T>
Bytes serialize(const SparseStream<T>& s) {
  Bytes out;
  serialize_into(s, out);
  return out;
}

// Reads one stream from `r`, leaving the reader after it.
template <Scalar T>
SparseStream<T> read_stream(ByteReader& r, StreamPolicy policy = {}, T fill = T{0}) {
  const auto flag = r.get<std::uint8_t>();
  const auto n = r.get<std::uint32_t>();
  if (flag == static_cast<std::uint8_t>(Repr::Dense)) {
    if (n == 0) throw DecodeError("dense stream with zero dimension");
    if (r.remaining() / sizeof(T) < n) throw DecodeError("truncated buffer");
    std::vector<T> values(n);
    r.get_array(std::span<T>(values));
    return SparseStream<T>::from_dense(std::move(values), policy, fill);
  }
  if (flag != static_cast<std::uint8_t>(Repr::Sparse)) {
    if (flag == kQuantizedFlag)
      throw DecodeError("quantized payload: decode with dequantize_stream");
    throw DecodeError("unknown representation flag " + std::to_string(flag));
  }
  const auto count = r.get<std::uint32_t>();
  if (r.remaining() / (4 + sizeof(T)) < count) throw DecodeError("truncated buffer");
  std::vector<Entry<T>> entries(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    entries[i].index = r.get<std::uint32_t>();
    entries[i].value = r.get<T>();
    if (entries[i].index >= n) throw DecodeError("sparse index out of range");
    if (i > 0 && entries[i - 1].index >= entries[i].index)
      throw DecodeError("sparse indices not strictly increasing");
  }
  return SparseStream<T>::from_entries(n, std::move(entries), policy, fill);
}

template <Scalar T>
SparseStream<T> deserialize(std::span<const std::uint8_t> bytes, StreamPolicy policy = {},
                            T fill = T{0}) {
  ByteReader r(bytes);
  auto s = read_stream<T>(r, policy, fill);
  if (r.remaining() != 0) throw DecodeError("trailing bytes after stream");
  return s;
}

}  // namespace sparsecoll
