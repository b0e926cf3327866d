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

#include <cmath>
#include <random>

#include "sparsecoll/collectives.hpp"
#include "sparsecoll/experiments.hpp"
#include "sparsecoll/socket_transport.hpp"

using namespace sparsecoll;

namespace {

using Streams = std::vector<SparseStream<float>>;

SparseStream<float> S(std::uint32_t n, std::initializer_list<std::pair<std::uint32_t, float>> xs) {
  std::vector<Entry<float>> es;
  for (auto [i, v] : xs) es.push_back({i, v});
  return SparseStream<float>::from_entries(n, es);
}

CollectiveConfig<float> config(Algorithm a) {
  CollectiveConfig<float> c;
  c.algorithm = a;
  return c;
}

Streams run(World& w, const Streams& in, const CollectiveConfig<float>& cfg) {
  return run_ranks(w, [&](Endpoint& ep) { return allreduce(in[static_cast<std::size_t>(ep.rank())], cfg, ep); });
}

std::uint64_t sent_pairs(const TraceSummary& s, int rank, const std::string& prefix) {
  std::uint64_t t = 0;
  for (const auto& [stage, tot] : s.rank_stages[static_cast<std::size_t>(rank)])
    if (stage.rfind(prefix, 0) == 0) t += tot.pairs;
  return t;
}

std::uint64_t sent_dense(const TraceSummary& s, int rank, const std::string& prefix) {
  std::uint64_t t = 0;
  for (const auto& [stage, tot] : s.rank_stages[static_cast<std::size_t>(rank)])
    if (stage.rfind(prefix, 0) == 0) t += tot.dense_words;
  return t;
}

std::uint64_t sent_bytes(const TraceSummary& s, int rank, const std::string& prefix) {
  std::uint64_t t = 0;
  for (const auto& [stage, tot] : s.rank_stages[static_cast<std::size_t>(rank)])
    if (stage.rfind(prefix, 0) == 0) t += tot.bytes;
  return t;
}

}  // namespace

TEST(RecursiveDouble, TwoRankExample) {
  SimulatedWorld w(2);
  auto out = run(w, {S(8, {{0, 1.0f}}), S(8, {{0, 2.0f}})}, config(Algorithm::SsarRecursiveDouble));
  for (const auto& r : out) EXPECT_EQ(r, S(8, {{0, 3.0f}}));
}

TEST(RecursiveDouble, DisjointInputsHitUpperPairBound) {
  const int p = 8;
  const std::uint32_t k = 4;
  Streams in;
  for (int r = 0; r < p; ++r) {
    std::vector<Entry<float>> es;
    for (std::uint32_t j = 0; j < k; ++j) es.push_back({static_cast<std::uint32_t>(r) * k + j, 1.0f});
    in.push_back(SparseStream<float>::from_entries(1024, es));
  }
  SimulatedWorld w(p);
  auto out = run(w, in, config(Algorithm::SsarRecursiveDouble));
  const auto s = w.trace_summary();
  for (int r = 0; r < p; ++r) {
    EXPECT_EQ(sent_pairs(s, r, "rd-stage-"), 28u);
    EXPECT_EQ(s.rank_stages[static_cast<std::size_t>(r)].at("rd-stage-1").pairs, 4u);
    EXPECT_EQ(s.rank_stages[static_cast<std::size_t>(r)].at("rd-stage-2").pairs, 8u);
    EXPECT_EQ(s.rank_stages[static_cast<std::size_t>(r)].at("rd-stage-3").pairs, 16u);
  }
  for (const auto& o : out) EXPECT_EQ(o.count_non_fill(), 32u);
}

TEST(RecursiveDouble, OverlappingInputsHitLowerPairBound) {
  const int p = 8;
  Streams in(p, S(1024, {{3, 1.0f}, {100, 2.0f}, {500, 3.0f}, {1000, 4.0f}}));
  SimulatedWorld w(p);
  auto out = run(w, in, config(Algorithm::SsarRecursiveDouble));
  const auto s = w.trace_summary();
  for (int r = 0; r < p; ++r) EXPECT_EQ(sent_pairs(s, r, "rd-stage-"), 12u);
  EXPECT_EQ(out[0], S(1024, {{3, 8.0f}, {100, 16.0f}, {500, 24.0f}, {1000, 32.0f}}));
}

TEST(RecursiveDouble, StageSizesNonDecreasing) {
  std::mt19937_64 rng(4);
  for (int p : {2, 4, 8, 16}) {
    auto in = uniform_inputs<float>(p, 4096, 40, rng());
    SimulatedWorld w(p);
    auto cfg = config(Algorithm::SsarRecursiveDouble);
    auto stats = run_ranks(w, [&](Endpoint& ep) {
      CollectiveStats st;
      allreduce(in[static_cast<std::size_t>(ep.rank())], cfg, ep, &st);
      return st;
    });
    for (const auto& st : stats) {
      ASSERT_EQ(st.stage_sizes.size(), static_cast<std::size_t>(std::log2(p)) + 1);
      for (std::size_t i = 1; i < st.stage_sizes.size(); ++i) EXPECT_GE(st.stage_sizes[i], st.stage_sizes[i - 1]);
    }
  }
}

TEST(SplitAllgather, TwoRankExample) {
  SimulatedWorld w(2);
  auto out = run(w, {S(4, {{0, 1.0f}}), S(4, {{1, 2.0f}})}, config(Algorithm::SsarSplitAllgather));
  for (const auto& r : out) EXPECT_EQ(r.logical(), (std::vector<float>{1, 2, 0, 0}));
}

TEST(SplitAllgather, PhaseOneSendsPMinusOneMessages) {
  const int p = 4;
  SimulatedWorld w(p);
  // Empty inputs: slices are still sent.
  run(w, Streams(p, SparseStream<float>::empty(64)), config(Algorithm::SsarSplitAllgather));
  const auto s = w.trace_summary();
  for (int r = 0; r < p; ++r) {
    EXPECT_EQ(s.rank_stages[static_cast<std::size_t>(r)].at("split-slice").messages, 3u);
    EXPECT_EQ(s.messages_sent[static_cast<std::size_t>(r)], 3u + 2u);
  }
}

TEST(Dsar, TwoRankExample) {
  SimulatedWorld w(2);
  auto out = run(w, {S(4, {{0, 1.0f}}), S(4, {{3, 1.0f}})}, config(Algorithm::DsarSplitAllgather));
  for (const auto& r : out) {
    EXPECT_TRUE(r.is_dense());
    EXPECT_EQ(r.logical(), (std::vector<float>{1, 0, 0, 1}));
  }
}

TEST(Dsar, DensePhaseVolumeIsExact) {
  for (int p : {2, 4, 8, 16}) {
    const std::uint32_t n = 4096;
    auto in = uniform_inputs<float>(p, n, 10, 77);
    SimulatedWorld w(p);
    run(w, in, config(Algorithm::DsarSplitAllgather));
    const auto s = w.trace_summary();
    for (int r = 0; r < p; ++r) {
      EXPECT_EQ(sent_dense(s, r, "ag-stage-"), static_cast<std::uint64_t>(p - 1) * n / static_cast<std::uint64_t>(p));
      EXPECT_EQ(sent_pairs(s, r, "ag-stage-"), 0u);
    }
  }
}

TEST(Dsar, QuantizedPhaseByteCountFromFormat) {
  const int p = 8;
  const std::uint32_t n = 65536;
  QuantizationScheme q{4, 1024, 5};
  auto cfg = config(Algorithm::DsarSplitAllgather);
  auto in = uniform_inputs<float>(p, n, 500, 3);
  SimulatedWorld wq(p), wf(p);
  cfg.quantize_dense_phase = q;
  auto outq = run(wq, in, cfg);
  cfg.quantize_dense_phase.reset();
  run(wf, in, cfg);
  const std::uint64_t part = n / p;
  // Message: u32 count, then per segment u32 begin + u32 length + payload.
  const std::uint64_t qpayload = 1 + 4 + 1 + 4 + (part / 1024) * (4 + 1024 * 4 / 8);
  const std::uint64_t fpayload = 1 + 4 + part * 4;
  std::uint64_t qexpect = 0, fexpect = 0;
  for (std::uint64_t segs = 1; segs < static_cast<std::uint64_t>(p); segs *= 2) {
    qexpect += 4 + segs * (8 + qpayload);
    fexpect += 4 + segs * (8 + fpayload);
  }
  const auto sq = wq.trace_summary(), sf = wf.trace_summary();
  for (int r = 0; r < p; ++r) {
    EXPECT_EQ(sent_bytes(sq, r, "ag-stage-"), qexpect);
    EXPECT_EQ(sent_bytes(sf, r, "ag-stage-"), fexpect);
    // Phase 1 stays full precision.
    EXPECT_EQ(sent_bytes(sq, r, "split-slice"), sent_bytes(sf, r, "split-slice"));
  }
  // About 1/8 of the F32 volume; scales add 4 bytes per 512 code bytes.
  EXPECT_LT(static_cast<double>(qexpect), fexpect / 8.0 * 1.02);
  // Replicas decode the same bytes.
  for (const auto& o : outq) EXPECT_EQ(serialize(o), serialize(outq[0]));
  // Error per entry bounded by each partition's bucket scale / 7.
  const auto ref = dense_reference(in, cfg.op);
  const auto got = outq[0].logical();
  for (std::uint32_t b = 0; b < n; b += 1024) {
    float scale = 0;
    for (std::uint32_t i = b; i < b + 1024; ++i) scale = std::max(scale, std::abs(ref[i]));
    for (std::uint32_t i = b; i < b + 1024; ++i) ASSERT_LE(std::abs(got[i] - ref[i]), scale / 7 * 1.0001f);
  }
}

TEST(Collectives, QuantizationOnlyWithDsar) {
  auto cfg = config(Algorithm::SsarSplitAllgather);
  cfg.quantize_dense_phase = QuantizationScheme{};
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg.algorithm = Algorithm::DsarSplitAllgather;
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Fold, Plans) {
  for (int r = 0; r < 4; ++r) {
    auto pl = fold_to_power_of_two(r, 4);
    EXPECT_EQ(pl.active_size, 4);
    EXPECT_FALSE(pl.partner.has_value());
  }
  auto p2 = fold_to_power_of_two(2, 3);
  EXPECT_TRUE(p2.surplus);
  EXPECT_EQ(*p2.partner, 0);
  EXPECT_EQ(p2.active_size, 2);
  EXPECT_EQ(*fold_to_power_of_two(0, 3).partner, 2);
  EXPECT_FALSE(fold_to_power_of_two(1, 3).partner.has_value());
  EXPECT_EQ(*fold_to_power_of_two(5, 6).partner, 1);
}

TEST(Fold, ThreeRanksTrafficAndOracle) {
  for (auto alg : kConcreteAlgorithms) {
    if (alg == Algorithm::DenseBaseline) continue;
    auto in = uniform_inputs<float>(3, 64, 6, 12);
    SimulatedWorld w(3);
    auto out = run(w, in, config(alg));
    for (const auto& o : out) EXPECT_EQ(o.logical(), dense_reference(in, ReductionOp<float>::sum()));
    const auto recs = w.trace();
    int pre = 0, post = 0;
    for (const auto& r : recs) {
      if (r.stage == "fold-pre") {
        ++pre;
        EXPECT_EQ(r.src, 2);
        EXPECT_EQ(r.dst, 0);
      }
      if (r.stage == "fold-post") {
        ++post;
        EXPECT_EQ(r.src, 0);
        EXPECT_EQ(r.dst, 2);
      }
      if (r.stage != "fold-pre") {
        EXPECT_TRUE(r.src != 2) << r.stage;
      }
    }
    EXPECT_EQ(pre, 1);
    EXPECT_EQ(post, 1);
  }
}

TEST(Collectives, OracleEquivalenceRandomGrid) {
  std::mt19937_64 seeds(8);
  for (int p : {2, 3, 4, 6, 8})
    for (double d : {0.001, 0.01, 0.1, 0.6})
      for (auto alg : kConcreteAlgorithms) {
        const std::uint32_t n = 4096;
        auto in = uniform_inputs<float>(p, n, k_for_density(n, d), seeds());
        SimulatedWorld w(p);
        auto out = run(w, in, config(alg));
        const auto ref = dense_reference(in, ReductionOp<float>::sum());
        for (const auto& o : out) {
          EXPECT_EQ(o.logical(), ref) << to_string(alg) << " P=" << p << " d=" << d;
          EXPECT_EQ(serialize(o), serialize(out[0]));
        }
      }
}

TEST(Collectives, FloatValuesWithinRelativeTolerance) {
  std::mt19937_64 rng(31);
  std::normal_distribution<float> g;
  for (int p : {3, 8}) {
    Streams in;
    for (int r = 0; r < p; ++r) {
      std::vector<Entry<float>> es;
      for (auto i : sample_distinct(rng, 300, 4096)) es.push_back({i, g(rng)});
      in.push_back(SparseStream<float>::from_entries(4096, es));
    }
    std::vector<double> ref(4096, 0.0), mag(4096, 0.0);
    for (const auto& s : in)
      for (auto e : s.entries()) {
        ref[e.index] += e.value;
        mag[e.index] += std::abs(e.value);
      }
    for (auto alg : kConcreteAlgorithms) {
      SimulatedWorld w(p);
      for (const auto& o : run(w, in, config(alg))) {
        const auto v = o.logical();
        for (std::size_t i = 0; i < v.size(); ++i)
          ASSERT_LE(std::abs(v[i] - ref[i]), 1e-5 * std::max(mag[i], 1e-30)) << to_string(alg) << " " << i;
      }
    }
  }
}

TEST(Collectives, MaxReductionWithNeutralFill) {
  auto cfg = config(Algorithm::SsarRecursiveDouble);
  cfg.op = ReductionOp<float>::max();
  for (auto alg : kConcreteAlgorithms) {
    cfg.algorithm = alg;
    std::vector<Entry<float>> a{{1, -5.0f}, {2, 3.0f}}, b{{2, 7.0f}, {6, -1.0f}};
    Streams in{SparseStream<float>::from_entries(8, a, {}, cfg.op.neutral),
               SparseStream<float>::from_entries(8, b, {}, cfg.op.neutral)};
    SimulatedWorld w(2);
    auto out = run(w, in, cfg);
    const float ninf = cfg.op.neutral;
    EXPECT_EQ(out[1].logical(), (std::vector<float>{ninf, -5, 7, ninf, ninf, ninf, -1, ninf})) << to_string(alg);
  }
}

TEST(DenseBaseline, RingTraffic) {
  const int p = 4;
  const std::uint32_t n = 64;
  SimulatedWorld w(p);
  run(w, Streams(p, S(n, {{1, 1.0f}})), config(Algorithm::DenseBaseline));
  const auto s = w.trace_summary();
  for (int r = 0; r < p; ++r) {
    EXPECT_EQ(s.messages_sent[static_cast<std::size_t>(r)], 2u * (p - 1));
    EXPECT_EQ(sent_dense(s, r, "ring-"), 2u * (p - 1) * n / p);
  }
}

TEST(Allgather, Examples) {
  SimulatedWorld w(2);
  CollectiveConfig<float> cfg;
  auto out = run_ranks(w, [&](Endpoint& ep) {
    Segment<float> seg = ep.rank() == 0 ? Segment<float>{{0, 4}, S(4, {{0, 1.0f}})}
                                        : Segment<float>{{4, 8}, S(4, {{1, 2.0f}})};
    return allgather_sparse(seg, 8, cfg, ep);
  });
  for (const auto& o : out) EXPECT_EQ(o, S(8, {{0, 1.0f}, {5, 2.0f}}));

  SimulatedWorld w2(3);
  auto empty = run_ranks(w2, [&](Endpoint& ep) {
    const auto r = static_cast<std::uint32_t>(ep.rank());
    return allgather_sparse(Segment<float>{{3 * r, 3 * r + 3}, SparseStream<float>::empty(3)}, 9, cfg, ep);
  });
  for (const auto& o : empty) {
    EXPECT_TRUE(o.is_sparse());
    EXPECT_TRUE(o.entries().empty());
  }
}

TEST(Allgather, VolumeFourRanks) {
  const int p = 4;
  SimulatedWorld w(p);
  CollectiveConfig<float> cfg;
  auto out = run_ranks(w, [&](Endpoint& ep) {
    const auto r = static_cast<std::uint32_t>(ep.rank());
    std::vector<Entry<float>> es;
    for (std::uint32_t i = 0; i < 100; ++i) es.push_back({3 * i, static_cast<float>(r + 1)});
    return allgather_sparse(Segment<float>{{1000 * r, 1000 * (r + 1)}, SparseStream<float>::from_entries(1000, es)},
                            4000, cfg, ep);
  });
  for (const auto& o : out) EXPECT_EQ(o.entries().size(), 400u);
  std::vector<std::uint64_t> received(p, 0);
  for (const auto& rec : w.trace()) received[static_cast<std::size_t>(rec.dst)] += rec.volume.pairs;
  for (auto r : received) EXPECT_EQ(r, 300u);
}

TEST(Allgather, OverlapIsRejected) {
  SimulatedWorld w(2);
  CollectiveConfig<float> cfg;
  EXPECT_THROW(run_ranks(w,
                         [&](Endpoint& ep) {
                           return allgather_sparse(Segment<float>{{0, 5}, SparseStream<float>::empty(5)}, 8, cfg, ep);
                         }),
               InvalidArgument);
}

TEST(Allgather, SixRanksOracle) {
  SimulatedWorld w(6);
  CollectiveConfig<float> cfg;
  const auto ranges = partition_ranges(600, 6);
  auto out = run_ranks(w, [&](Endpoint& ep) {
    const auto rg = ranges[static_cast<std::size_t>(ep.rank())];
    std::vector<Entry<float>> es{{0, 1.0f}, {rg.size() - 1, 2.0f}};
    return allgather_sparse(Segment<float>{rg, SparseStream<float>::from_entries(rg.size(), es)}, 600, cfg, ep);
  });
  for (const auto& o : out) {
    ASSERT_EQ(o.entries().size(), 12u);
    for (std::size_t r = 0; r < 6; ++r) {
      EXPECT_EQ(o.entries()[2 * r].index, ranges[r].begin);
      EXPECT_EQ(o.entries()[2 * r + 1].index, ranges[r].end - 1);
    }
  }
}

TEST(Auto, Selection) {
  CollectiveConfig<float> cfg;
  EXPECT_EQ(select_algorithm<float>(1, 1000000, 4, cfg), Algorithm::SsarRecursiveDouble);
  EXPECT_EQ(select_algorithm<float>(1000000, 1000000, 4, cfg), Algorithm::DsarSplitAllgather);
  EXPECT_EQ(select_algorithm<float>(5000, 1000000, 8, cfg), Algorithm::SsarSplitAllgather);
  // P=1: E[K] = k, threshold 512 for N=1024 F32.
  EXPECT_EQ(select_algorithm<float>(512, 1024, 1, cfg), Algorithm::DsarSplitAllgather);
  EXPECT_EQ(select_algorithm<float>(511, 1024, 1, cfg), Algorithm::SsarRecursiveDouble);
}

TEST(Auto, DispatchesAndRequiresEstimate) {
  auto in = uniform_inputs<float>(4, 4096, 4, 1);
  SimulatedWorld w(4);
  auto cfg = config(Algorithm::Auto);
  EXPECT_THROW(run(w, in, cfg), InvalidArgument);
  SimulatedWorld w2(4);
  cfg.estimated_k = 4;
  auto out = run_ranks(w2, [&](Endpoint& ep) {
    CollectiveStats st;
    auto r = allreduce(in[static_cast<std::size_t>(ep.rank())], cfg, ep, &st);
    EXPECT_EQ(st.executed, Algorithm::SsarRecursiveDouble);
    return r;
  });
  EXPECT_EQ(out[0].logical(), dense_reference(in, cfg.op));
}

TEST(Collectives, SocketBackendOracle) {
  for (auto alg : kConcreteAlgorithms) {
    auto in = uniform_inputs<float>(6, 4096, 40, 5);
    SocketWorld w(6);
    auto out = run(w, in, config(alg));
    for (const auto& o : out) EXPECT_EQ(o.logical(), dense_reference(in, ReductionOp<float>::sum()));
  }
}

TEST(Collectives, DoublePrecision) {
  std::vector<SparseStream<double>> in;
  for (int r = 0; r < 4; ++r) {
    std::vector<Entry<double>> es{{static_cast<std::uint32_t>(r), 0.1 * r}, {10, 1e-3}};
    in.push_back(SparseStream<double>::from_entries(16, es));
  }
  for (auto alg : kConcreteAlgorithms) {
    SimulatedWorld w(4);
    CollectiveConfig<double> cfg;
    cfg.algorithm = alg;
    auto out = run_ranks(w, [&](Endpoint& ep) { return allreduce(in[static_cast<std::size_t>(ep.rank())], cfg, ep); });
    EXPECT_NEAR(out[2].logical()[10], 4e-3, 1e-15);
    EXPECT_NEAR(out[2].logical()[3], 0.3, 1e-15);
  }
}
