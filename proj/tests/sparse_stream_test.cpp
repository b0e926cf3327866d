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

#include <gtest/gtest.h>

#include <cstring>
#include <random>
#include <vector>

#include "sparsecoll/sparse_stream.hpp"

using namespace sparsecoll;

namespace {

template <class T>
std::vector<Entry<T>> E(std::initializer_list<std::pair<std::uint32_t, T>> xs) {
  std::vector<Entry<T>> out;
  for (auto [i, v] : xs) out.push_back({i, v});
  return out;
}

// Dense reference: plain loops over full vectors.
template <class T>
std::vector<T> dense_op(std::vector<T> a, const std::vector<T>& b, const ReductionOp<T>& op) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = op(a[i], b[i]);
  return a;
}

template <class T>
SparseStream<T> random_stream(std::mt19937_64& rng, std::uint32_t n, double density, bool dense) {
  std::bernoulli_distribution keep(density);
  std::uniform_int_distribution<int> val(-4, 4);
  std::vector<T> v(n, T{0});
  for (auto& x : v)
    if (keep(rng)) x = static_cast<T>(val(rng));
  return dense ? SparseStream<T>::from_dense(v) : SparseStream<T>::sparsify(std::span<const T>(v));
}

}  // namespace

TEST(SwitchThreshold, Examples) {
  EXPECT_EQ(switch_threshold(1024, 4, 4), 512u);
  EXPECT_EQ(switch_threshold(8, 8, 4), 5u);
  EXPECT_EQ(switch_threshold(1, 4, 4), 0u);
}

TEST(SwitchThreshold, RejectsBadArguments) {
  EXPECT_THROW(switch_threshold(0, 4, 4), InvalidArgument);
  EXPECT_THROW(switch_threshold(16, 2, 4), InvalidArgument);
  // 2^17 indices need at least 3 bytes.
  EXPECT_THROW(switch_threshold(1u << 17, 4, 2), InvalidArgument);
  EXPECT_EQ(switch_threshold(1u << 16, 4, 2), (1u << 18) / 6);
}

TEST(SwitchThreshold, MatchesVolumeInequality) {
  // Largest nnz with nnz*(c+isize) <= N*isize, found by scanning.
  for (std::uint64_t n : {1u, 2u, 7u, 8u, 100u, 1023u, 4096u})
    for (std::uint32_t isize : {4u, 8u}) {
      std::uint64_t best = 0;
      for (std::uint64_t m = 0; m <= n; ++m)
        if (m * (4 + isize) <= n * isize) best = m;
      EXPECT_EQ(switch_threshold(n, isize, 4), best) << n << " " << isize;
    }
}

TEST(SparseStream, RejectsUnsortedOrOutOfRange) {
  EXPECT_THROW(SparseStream<float>::from_entries(8, E<float>({{3, 1}, {3, 2}})), InvalidArgument);
  EXPECT_THROW(SparseStream<float>::from_entries(8, E<float>({{5, 1}, {2, 2}})), InvalidArgument);
  EXPECT_THROW(SparseStream<float>::from_entries(8, E<float>({{8, 1}})), InvalidArgument);
}

TEST(SparseStream, FromEntriesOverThresholdIsDense) {
  auto s = SparseStream<double>::from_entries(8, E<double>({{0, 1}, {1, 1}, {2, 1}, {3, 1}, {4, 1}, {5, 1}}));
  EXPECT_TRUE(s.is_dense());
  auto t = SparseStream<double>::from_entries(8, E<double>({{0, 1}, {1, 1}, {2, 1}, {3, 1}, {4, 1}}));
  EXPECT_TRUE(t.is_sparse());
}

TEST(SumInplace, HandMerge) {
  auto a = SparseStream<float>::from_entries(16, E<float>({{0, 1.0f}, {2, 2.0f}}));
  auto b = SparseStream<float>::from_entries(16, E<float>({{2, 3.0f}, {5, 1.0f}}));
  auto r = sum_inplace(a, b, ReductionOp<float>::sum());
  ASSERT_TRUE(r.is_sparse());
  EXPECT_EQ(r, SparseStream<float>::from_entries(16, E<float>({{0, 1.0f}, {2, 5.0f}, {5, 1.0f}})));
}

TEST(SumInplace, EmptyIsNeutral) {
  auto a = SparseStream<float>::from_entries(16, E<float>({{1, 4.0f}, {9, -2.0f}}));
  EXPECT_EQ(sum_inplace(a, SparseStream<float>::empty(16), ReductionOp<float>::sum()), a);
  EXPECT_EQ(sum_inplace(SparseStream<float>::empty(16), a, ReductionOp<float>::sum()), a);
}

TEST(SumInplace, UpperBoundRuleDensifies) {
  auto a = SparseStream<double>::from_entries(8, E<double>({{0, 1}, {1, 1}, {2, 1}}));
  auto b = SparseStream<double>::from_entries(8, E<double>({{3, 1}, {4, 1}, {5, 1}}));
  ASSERT_EQ(a.threshold(), 5u);
  auto r = sum_inplace(a, b, ReductionOp<double>::sum());
  EXPECT_TRUE(r.is_dense());
  EXPECT_EQ(r.count_non_fill(), 6u);
}

TEST(SumInplace, UpperBoundRuleIgnoresActualOverlap) {
  // Union is 3 but 3+3 > 5 still forces dense.
  auto a = SparseStream<double>::from_entries(8, E<double>({{0, 1}, {1, 1}, {2, 1}}));
  auto r = sum_inplace(a, a, ReductionOp<double>::sum());
  EXPECT_TRUE(r.is_dense());
  EXPECT_EQ(r.count_non_fill(), 3u);
}

TEST(SumInplace, CancellationKeepsExplicitZero) {
  auto a = SparseStream<float>::from_entries(16, E<float>({{4, 2.0f}}));
  auto b = SparseStream<float>::from_entries(16, E<float>({{4, -2.0f}}));
  auto r = sum_inplace(a, b, ReductionOp<float>::sum());
  ASSERT_TRUE(r.is_sparse());
  ASSERT_EQ(r.entries().size(), 1u);
  EXPECT_EQ(r.entries()[0].index, 4u);
  EXPECT_EQ(r.entries()[0].value, 0.0f);
  r.compact();
  EXPECT_TRUE(r.entries().empty());
}

TEST(SumInplace, DimensionMismatch) {
  EXPECT_THROW(sum_inplace(SparseStream<float>::empty(8), SparseStream<float>::empty(9), ReductionOp<float>::sum()),
               InvalidArgument);
}

TEST(SumInplace, DenseNeverResparsifies) {
  auto d = SparseStream<float>::from_dense(std::vector<float>(32, 0.0f));
  auto r = sum_inplace(d, SparseStream<float>::empty(32), ReductionOp<float>::sum());
  EXPECT_TRUE(r.is_dense());
}

TEST(SumInplace, PropertyMatchesDenseReferenceAllPaths) {
  std::mt19937_64 rng(11);
  const std::vector<ReductionOp<float>> ops{ReductionOp<float>::sum(), ReductionOp<float>::max(),
                                            ReductionOp<float>::min(), ReductionOp<float>::prod()};
  for (int trial = 0; trial < 400; ++trial) {
    const std::uint32_t n = 1 + static_cast<std::uint32_t>(rng() % 200);
    const double da = std::uniform_real_distribution<double>(0, 0.8)(rng);
    const double db = std::uniform_real_distribution<double>(0, 0.8)(rng);
    const auto& op = ops[trial % ops.size()];
    auto a = random_stream<float>(rng, n, da, rng() % 3 == 0);
    auto b = random_stream<float>(rng, n, db, rng() % 3 == 0);
    // Re-base on the op's neutral element so absent entries mean neutral.
    auto to_op = [&](const SparseStream<float>& s) {
      std::vector<Entry<float>> es;
      auto lv = s.logical();
      if (s.is_dense()) {
        for (auto& x : lv)
          if (x == 0.0f) x = op.neutral;
        return SparseStream<float>::from_dense(lv, {}, op.neutral);
      }
      for (auto e : s.entries()) es.push_back(e);
      return SparseStream<float>::from_entries(n, es, {}, op.neutral);
    };
    a = to_op(a);
    b = to_op(b);
    const auto expect = dense_op(a.logical(), b.logical(), op);
    const auto r = sum_inplace(a, b, op);
    EXPECT_EQ(r.logical(), expect) << "trial " << trial << " op " << op.name;
    if (r.is_sparse()) {
      EXPECT_LE(r.entries().size(), r.threshold());
    }
  }
}

TEST(SumInplace, NeutralElementLaw) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (const auto& op : {ReductionOp<double>::sum(), ReductionOp<double>::prod(), ReductionOp<double>::max(),
                         ReductionOp<double>::min()})
    for (int i = 0; i < 1000; ++i) {
      const double x = g(rng);
      EXPECT_EQ(op(x, op.neutral), x);
      EXPECT_EQ(op(op.neutral, x), x);
    }
}

TEST(SumInplace, FoldOrderAgreesWithinTolerance) {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> g;
  const std::uint32_t n = 2048;
  std::vector<SparseStream<float>> xs;
  for (int i = 0; i < 16; ++i) {
    std::vector<Entry<float>> es;
    for (std::uint32_t j = 0; j < n; j += 1 + static_cast<std::uint32_t>(rng() % 40)) es.push_back({j, g(rng)});
    xs.push_back(SparseStream<float>::from_entries(n, es));
  }
  auto left = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) left = sum_inplace(left, xs[i], ReductionOp<float>::sum());
  auto level = xs;
  while (level.size() > 1) {
    std::vector<SparseStream<float>> next;
    for (std::size_t i = 0; i < level.size(); i += 2)
      next.push_back(sum_inplace(level[i], level[i + 1], ReductionOp<float>::sum()));
    level = std::move(next);
  }
  const auto a = left.logical(), b = level[0].logical();
  for (std::uint32_t i = 0; i < n; ++i) {
    double mag = 0;
    for (const auto& x : xs) mag += std::abs(x.logical()[i]);
    EXPECT_LE(std::abs(a[i] - b[i]), 1e-5 * std::max(1.0, mag)) << i;
  }
}

TEST(ConcatDisjoint, Examples) {
  std::vector<Segment<float>> parts{
      {{0, 4}, SparseStream<float>::from_entries(4, E<float>({{0, 1.0f}}))},
      {{4, 8}, SparseStream<float>::from_entries(4, E<float>({{1, 2.0f}}))}};
  auto r = concat_disjoint<float>(parts, 8);
  EXPECT_EQ(r, SparseStream<float>::from_entries(8, E<float>({{0, 1.0f}, {5, 2.0f}})));

  std::vector<Segment<float>> empties{{{0, 4}, SparseStream<float>::empty(4)},
                                      {{4, 8}, SparseStream<float>::empty(4)}};
  auto e = concat_disjoint<float>(empties, 8);
  EXPECT_TRUE(e.is_sparse());
  EXPECT_TRUE(e.entries().empty());
}

TEST(ConcatDisjoint, CountRuleDensifies) {
  // N=64 F32: threshold 32. Four ranges of 16, each half full: 32 entries
  // stays sparse; one more entry tips it over.
  std::vector<Segment<float>> parts;
  for (std::uint32_t p = 0; p < 4; ++p) {
    std::vector<Entry<float>> es;
    for (std::uint32_t j = 0; j < 8; ++j) es.push_back({2 * j, 1.0f});
    parts.push_back({{16 * p, 16 * (p + 1)}, SparseStream<float>::from_entries(16, es)});
  }
  EXPECT_TRUE(concat_disjoint<float>(parts, 64).is_sparse());
  auto es = std::vector<Entry<float>>(parts[3].stream.entries().begin(), parts[3].stream.entries().end());
  es.push_back({15, 1.0f});
  parts[3].stream = SparseStream<float>::from_entries(16, es);
  auto r = concat_disjoint<float>(parts, 64);
  EXPECT_TRUE(r.is_dense());
  EXPECT_EQ(r.count_non_fill(), 33u);
}

TEST(ConcatDisjoint, OverlapThrows) {
  std::vector<Segment<float>> parts{{{0, 5}, SparseStream<float>::empty(5)}, {{4, 8}, SparseStream<float>::empty(4)}};
  EXPECT_THROW(concat_disjoint<float>(parts, 8), InvalidArgument);
}

TEST(ConcatDisjoint, InverseOfSlice) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 50; ++t) {
    auto s = random_stream<float>(rng, 500, 0.05 + 0.1 * (t % 8), t % 4 == 0);
    std::vector<Segment<float>> parts;
    for (auto r : partition_ranges(500, 1 + t % 7)) parts.push_back({r, slice(s, r)});
    EXPECT_EQ(concat_disjoint<float>(parts, 500).logical(), s.logical());
  }
}

TEST(Serialize, EmptySparseIsHeaderOnly) {
  auto s = SparseStream<float>::empty(16);
  auto b = serialize(s);
  EXPECT_EQ(b, (Bytes{0x00, 16, 0, 0, 0, 0, 0, 0, 0}));
  auto d = deserialize<float>(b);
  EXPECT_EQ(d, s);
  EXPECT_EQ(d.dimension(), 16u);
}

TEST(Serialize, SingleEntryRoundTripBytes) {
  auto s = SparseStream<float>::from_entries(10, E<float>({{3, 1.5f}}));
  auto b = serialize(s);
  ASSERT_EQ(b.size(), 1u + 4 + 4 + 8);
  float v;
  std::memcpy(&v, b.data() + 13, 4);
  EXPECT_EQ(v, 1.5f);
  EXPECT_EQ(b[9], 3);
  EXPECT_EQ(deserialize<float>(b), s);
}

TEST(Serialize, DenseEightF32) {
  std::vector<float> v{1, -2, 3.25f, 0, 5, 6, 7, 8};
  auto s = SparseStream<float>::from_dense(v);
  auto b = serialize(s);
  // flag + u32 N + 8 * 4 value bytes.
  ASSERT_EQ(b.size(), 1u + 4 + 32);
  EXPECT_EQ(b[0], 0x01);
  EXPECT_EQ(serialized_size(s), b.size());
  auto d = deserialize<float>(b);
  EXPECT_TRUE(d.is_dense());
  EXPECT_EQ(d.logical(), v);
}

TEST(Serialize, BitExactRoundTripProperty) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 200; ++t) {
    const std::uint32_t n = 1 + static_cast<std::uint32_t>(rng() % 300);
    std::vector<double> v(n, 0.0);
    for (auto& x : v)
      if (rng() % 5 == 0) {
        std::uint64_t bits = rng();
        std::memcpy(&x, &bits, 8);
        if (!std::isfinite(x)) x = -0.0;
      }
    auto s = t % 2 ? SparseStream<double>::from_dense(v) : SparseStream<double>::sparsify(std::span<const double>(v));
    auto b = serialize(s);
    EXPECT_EQ(b.size(), serialized_size(s));
    auto d = deserialize<double>(b);
    EXPECT_EQ(serialize(d), b);
    EXPECT_EQ(std::memcmp(d.logical().data(), s.logical().data(), n * 8), 0);
  }
}

TEST(Serialize, DecodeErrors) {
  auto good = serialize(SparseStream<float>::from_entries(8, E<float>({{2, 1.0f}, {5, 2.0f}})));
  for (std::size_t cut = 0; cut < good.size(); ++cut)
    EXPECT_THROW(deserialize<float>(std::span(good).first(cut)), DecodeError) << cut;
  auto bad_flag = good;
  bad_flag[0] = 0x07;
  EXPECT_THROW(deserialize<float>(bad_flag), DecodeError);
  auto bad_index = good;
  bad_index[17] = 9;  // second index -> 9 >= N
  EXPECT_THROW(deserialize<float>(bad_index), DecodeError);
  auto unsorted = good;
  unsorted[17] = 1;  // second index -> 1 < 2
  EXPECT_THROW(deserialize<float>(unsorted), DecodeError);
  auto trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(deserialize<float>(trailing), DecodeError);
}
