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

// Sparse allreduce / allgather over a World.
//
//  * ssar_recursive_double: log2(P) exchange stages with partners at
//    distance 1, 2, 4, ...; every stage reduces the partner's stream in.
//  * ssar_split_allgather: each rank sends every index-range slice of its
//    stream directly to the range owner, owners reduce, then a recursive
//    doubling allgather concatenates the owned ranges.
//  * dsar_split_allgather: like the split variant, but owners densify their
//    range (optionally quantize it) and the allgather moves dense blocks.
//  * dense_baseline: ring reduce-scatter followed by ring allgather on the
//    densified inputs.
//
// Non power-of-two worlds fold the surplus ranks onto partners before the
// core schedule and send them the result afterwards.
//
// Every rank must call the same collective with the same configuration.
//
// Allgather messages carry a list of segments:
//   u32 count, then per segment: u32 begin, u32 byte length, stream payload
// where the payload is a sparse, dense or quantized stream over the
// segment's range (local coordinates).

#pragma once

#include <bit>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sparsecoll/algorithm.hpp"
#include "sparsecoll/cost_model.hpp"
#include "sparsecoll/error.hpp"
#include "sparsecoll/quantization.hpp"
#include "sparsecoll/sparse_stream.hpp"
#include "sparsecoll/transport.hpp"

namespace sparsecoll {

template <Scalar T>
struct CollectiveConfig {
  Algorithm algorithm = Algorithm::Auto;
  ReductionOp<T> op = ReductionOp<T>::sum();
  // Quantizes the dense allgather phase; dsar_split_allgather only.
  std::optional<QuantizationScheme> quantize_dense_phase;
  StreamPolicy policy;
  // Rough per-rank non-zero count, required by Auto.
  std::optional<std::uint64_t> estimated_k;
  // Auto picks recursive doubling while E[K] pairs fit in this many bytes.
  std::uint64_t small_message_bytes = 64 * 1024;

  void validate() const {
    detail::require(op.apply != nullptr, "collective config: missing reduction op");
    if (quantize_dense_phase) {
      detail::require(algorithm == Algorithm::DsarSplitAllgather,
                      "quantized dense phase requires dsar_split_allgather");
      quantize_dense_phase->validate();
    }
  }
};

// Optional per-call diagnostics.
struct CollectiveStats {
  Algorithm executed = Algorithm::Auto;
  // Recursive doubling: stored count (pairs, or N once dense) before the
  // first stage and after each stage.
  std::vector<std::size_t> stage_sizes;
};

struct FoldPlan {
  int world_size = 1;
  int active_size = 1;
  bool surplus = false;
  // Surplus rank: the active rank it delegates to. Active rank: the surplus
  // rank folded onto it, if any.
  std::optional<int> partner;

  bool active() const { return !surplus; }
};

inline FoldPlan fold_to_power_of_two(int rank, int size) {
  detail::require(size >= 1 && rank >= 0 && rank < size, "fold: invalid rank or size");
  FoldPlan plan;
  plan.world_size = size;
  plan.active_size = static_cast<int>(std::bit_floor(static_cast<unsigned>(size)));
  if (rank >= plan.active_size) {
    plan.surplus = true;
    plan.partner = rank - plan.active_size;
  } else if (rank + plan.active_size < size) {
    plan.partner = rank + plan.active_size;
  }
  return plan;
}

inline FoldPlan fold_to_power_of_two(const Endpoint& ep) {
  return fold_to_power_of_two(ep.rank(), ep.size());
}

namespace detail {

template <Scalar T>
Volume volume_of(const SparseStream<T>& s) {
  return s.is_sparse() ? Volume{s.entries().size(), 0} : Volume{0, s.values().size()};
}

// Model volume of an encoded stream, read from its header.
inline Volume payload_volume(std::span<const std::uint8_t> payload) {
  ByteReader r(payload);
  const auto flag = r.get<std::uint8_t>();
  const auto n = r.get<std::uint32_t>();
  if (flag == static_cast<std::uint8_t>(Repr::Sparse)) return {r.get<std::uint32_t>(), 0};
  return {0, n};
}

template <Scalar T>
SparseStream<T> adopt(const SparseStream<T>& s, const StreamPolicy& policy, T fill) {
  if (s.is_dense()) return SparseStream<T>::from_dense(std::vector<T>(s.values().begin(), s.values().end()),
                                                       policy, fill);
  return SparseStream<T>::from_entries(s.dimension(), {s.entries().begin(), s.entries().end()},
                                       policy, fill);
}

template <Scalar T>
void send_stream(Endpoint& ep, int to, const SparseStream<T>& s, std::string stage) {
  ep.send(to, serialize(s), std::move(stage), volume_of(s));
}

template <Scalar T>
SparseStream<T> recv_stream(Endpoint& ep, int from, const CollectiveConfig<T>& cfg) {
  const auto bytes = ep.recv(from);
  return deserialize<T>(bytes, cfg.policy, cfg.op.neutral);
}

// op(low, high) where `low` came from the lower rank block, keeping the
// reduction order rank-ascending on every replica.
template <Scalar T>
void reduce_ordered(SparseStream<T>& mine, SparseStream<T> theirs, bool theirs_is_lower,
                    const ReductionOp<T>& op) {
  if (theirs_is_lower) {
    reduce_into(theirs, mine, op);
    mine = std::move(theirs);
  } else {
    reduce_into(mine, theirs, op);
  }
}

template <Scalar T>
void fold_pre(Endpoint& ep, const FoldPlan& plan, SparseStream<T>& acc,
              const CollectiveConfig<T>& cfg) {
  if (!plan.partner) return;
  if (plan.surplus) {
    send_stream(ep, *plan.partner, acc, "fold-pre");
  } else {
    reduce_ordered(acc, recv_stream(ep, *plan.partner, cfg), false, cfg.op);
  }
}

template <Scalar T>
void fold_post(Endpoint& ep, const FoldPlan& plan, SparseStream<T>& result,
               const CollectiveConfig<T>& cfg) {
  if (!plan.partner) return;
  if (plan.surplus) {
    result = recv_stream(ep, *plan.partner, cfg);
  } else {
    send_stream(ep, *plan.partner, result, "fold-post");
  }
}

struct WireSegment {
  std::uint32_t begin = 0;
  Bytes payload;
  Volume volume;
};

inline Bytes encode_segments(std::span<const WireSegment> segs) {
  std::size_t size = 4;
  for (const auto& s : segs) size += 8 + s.payload.size();
  Bytes out;
  out.reserve(size);
  ByteWriter w(out);
  w.put(static_cast<std::uint32_t>(segs.size()));
  for (const auto& s : segs) {
    w.put(s.begin);
    w.put(static_cast<std::uint32_t>(s.payload.size()));
    w.put_bytes(s.payload);
  }
  return out;
}

inline std::vector<WireSegment> decode_segments(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto count = r.get<std::uint32_t>();
  std::vector<WireSegment> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    WireSegment s;
    s.begin = r.get<std::uint32_t>();
    const auto len = r.get<std::uint32_t>();
    auto payload = r.get_bytes(len);
    s.payload.assign(payload.begin(), payload.end());
    s.volume = payload_volume(s.payload);
    out.push_back(std::move(s));
  }
  if (r.remaining() != 0) throw DecodeError("trailing bytes after segment list");
  return out;
}

inline Volume total_volume(std::span<const WireSegment> segs) {
  Volume v;
  for (const auto& s : segs) v += s.volume;
  return v;
}

template <Scalar T>
WireSegment encode_segment(std::uint32_t begin, const SparseStream<T>& s) {
  return {begin, serialize(s), volume_of(s)};
}

// Recursive doubling allgather of segment lists among the first
// `active_size` ranks (a power of two). Returns all segments, sorted.
inline std::vector<WireSegment> gather_segments(Endpoint& ep, int active_size,
                                                std::vector<WireSegment> held) {
  for (int d = 1, t = 1; d < active_size; d <<= 1, ++t) {
    const int partner = ep.rank() ^ d;
    const auto volume = total_volume(held);
    ep.send(partner, encode_segments(held), "ag-stage-" + std::to_string(t), volume);
    auto theirs = decode_segments(ep.recv(partner));
    for (auto& s : theirs) held.push_back(std::move(s));
  }
  std::stable_sort(held.begin(), held.end(),
                   [](const WireSegment& a, const WireSegment& b) { return a.begin < b.begin; });
  return held;
}

template <Scalar T>
SparseStream<T> decode_segment_stream(const WireSegment& s, const CollectiveConfig<T>& cfg) {
  ByteReader r(s.payload);
  if (!s.payload.empty() && s.payload[0] == kQuantizedFlag)
    return read_quantized_stream<T>(r, cfg.policy, cfg.op.neutral);
  return read_stream<T>(r, cfg.policy, cfg.op.neutral);
}

template <Scalar T>
SparseStream<T> assemble(std::span<const WireSegment> segs, std::uint32_t n,
                         const CollectiveConfig<T>& cfg) {
  std::vector<Segment<T>> parts;
  parts.reserve(segs.size());
  for (const auto& s : segs) {
    auto stream = decode_segment_stream(s, cfg);
    if (static_cast<std::uint64_t>(s.begin) + stream.dimension() > n)
      throw DecodeError("segment exceeds universe");
    const IndexRange range{s.begin, s.begin + stream.dimension()};
    parts.push_back({range, std::move(stream)});
  }
  return concat_disjoint<T>(parts, n, cfg.policy, cfg.op.neutral);
}

inline std::uint64_t quantizer_seed(std::uint64_t base, int rank) {
  return splitmix64(base ^ splitmix64(static_cast<std::uint64_t>(rank) + 1));
}

// Shared body of the split/allgather algorithms on an active world.
template <Scalar T>
SparseStream<T> split_allgather(Endpoint& ep, int active_size, const SparseStream<T>& acc,
                                const CollectiveConfig<T>& cfg, bool densify_partitions) {
  const int rank = ep.rank();
  const auto n = acc.dimension();
  const auto ranges = partition_ranges(n, active_size);

  // Split phase: direct sends of every slice, empty ones included.
  std::vector<OpHandle> sends;
  std::vector<OpHandle> recvs;
  sends.reserve(static_cast<std::size_t>(active_size));
  recvs.reserve(static_cast<std::size_t>(active_size));
  for (int j = 1; j < active_size; ++j) {
    const int src = (rank - j + active_size) % active_size;
    recvs.push_back(ep.irecv(src));
  }
  for (int j = 1; j < active_size; ++j) {
    const int dst = (rank + j) % active_size;
    auto part = slice(acc, ranges[static_cast<std::size_t>(dst)]);
    sends.push_back(ep.isend(dst, serialize(part), "split-slice", volume_of(part)));
  }

  std::vector<std::optional<SparseStream<T>>> slices(static_cast<std::size_t>(active_size));
  slices[static_cast<std::size_t>(rank)] = slice(acc, ranges[static_cast<std::size_t>(rank)]);
  for (int j = 1; j < active_size; ++j) {
    const int src = (rank - j + active_size) % active_size;
    slices[static_cast<std::size_t>(src)] =
        deserialize<T>(recvs[static_cast<std::size_t>(j - 1)].wait(), cfg.policy, cfg.op.neutral);
  }
  for (auto& h : sends) h.wait();

  SparseStream<T> reduced = std::move(*slices[0]);
  for (std::size_t i = 1; i < slices.size(); ++i) reduce_into(reduced, *slices[i], cfg.op);

  const auto begin = ranges[static_cast<std::size_t>(rank)].begin;
  WireSegment mine;
  if (densify_partitions && reduced.dimension() > 0) {
    reduced.densify(cfg.op.neutral);
    if (cfg.quantize_dense_phase) {
      std::mt19937_64 rng(quantizer_seed(cfg.quantize_dense_phase->seed, rank));
      mine = {begin, quantize_stream(reduced, *cfg.quantize_dense_phase, rng),
              Volume{0, reduced.dimension()}};
    } else {
      mine = encode_segment(begin, reduced);
    }
  } else {
    mine = encode_segment(begin, reduced);
  }

  std::vector<WireSegment> held;
  held.push_back(std::move(mine));
  const auto all = gather_segments(ep, active_size, std::move(held));
  return assemble<T>(all, n, cfg);
}

}  // namespace detail

template <Scalar T>
SparseStream<T> allreduce_ssar_recursive_double(const SparseStream<T>& local,
                                                const CollectiveConfig<T>& cfg, Endpoint& ep,
                                                CollectiveStats* stats = nullptr) {
  cfg.validate();
  const auto plan = fold_to_power_of_two(ep);
  auto acc = detail::adopt(local, cfg.policy, cfg.op.neutral);
  detail::fold_pre(ep, plan, acc, cfg);
  if (stats) {
    stats->executed = Algorithm::SsarRecursiveDouble;
    stats->stage_sizes.clear();
  }
  if (plan.active()) {
    if (stats) stats->stage_sizes.push_back(acc.stored_count());
    for (int d = 1, t = 1; d < plan.active_size; d <<= 1, ++t) {
      const int partner = ep.rank() ^ d;
      detail::send_stream(ep, partner, acc, "rd-stage-" + std::to_string(t));
      detail::reduce_ordered(acc, detail::recv_stream(ep, partner, cfg), partner < ep.rank(), cfg.op);
      if (stats) stats->stage_sizes.push_back(acc.stored_count());
    }
  }
  detail::fold_post(ep, plan, acc, cfg);
  return acc;
}

template <Scalar T>
SparseStream<T> allreduce_ssar_split_allgather(const SparseStream<T>& local,
                                               const CollectiveConfig<T>& cfg, Endpoint& ep,
                                               CollectiveStats* stats = nullptr) {
  cfg.validate();
  const auto plan = fold_to_power_of_two(ep);
  auto acc = detail::adopt(local, cfg.policy, cfg.op.neutral);
  detail::fold_pre(ep, plan, acc, cfg);
  if (stats) stats->executed = Algorithm::SsarSplitAllgather;
  if (plan.active()) acc = detail::split_allgather(ep, plan.active_size, acc, cfg, false);
  detail::fold_post(ep, plan, acc, cfg);
  return acc;
}

template <Scalar T>
SparseStream<T> allreduce_dsar_split_allgather(const SparseStream<T>& local,
                                               const CollectiveConfig<T>& cfg, Endpoint& ep,
                                               CollectiveStats* stats = nullptr) {
  cfg.validate();
  const auto plan = fold_to_power_of_two(ep);
  auto acc = detail::adopt(local, cfg.policy, cfg.op.neutral);
  detail::fold_pre(ep, plan, acc, cfg);
  if (stats) stats->executed = Algorithm::DsarSplitAllgather;
  if (plan.active()) acc = detail::split_allgather(ep, plan.active_size, acc, cfg, true);
  detail::fold_post(ep, plan, acc, cfg);
  acc.densify(cfg.op.neutral);
  return acc;
}

// Ring reduce-scatter + ring allgather over the densified inputs; works for
// any P without folding.
template <Scalar T>
SparseStream<T> allreduce_dense_baseline(const SparseStream<T>& local,
                                         const CollectiveConfig<T>& cfg, Endpoint& ep,
                                         CollectiveStats* stats = nullptr) {
  cfg.validate();
  if (stats) stats->executed = Algorithm::DenseBaseline;
  const int p = ep.size();
  const int rank = ep.rank();
  auto values = local.logical();
  if (local.is_sparse() && cfg.op.neutral != local.fill())
    for (auto& v : values)
      if (v == local.fill()) v = cfg.op.neutral;
  const auto n = local.dimension();
  const auto chunks = partition_ranges(n, p);
  const int right = (rank + 1) % p;
  const int left = (rank - 1 + p) % p;

  auto chunk_stream = [&](int c) {
    const auto r = chunks[static_cast<std::size_t>(c)];
    if (r.size() == 0) return SparseStream<T>::empty(0, cfg.policy, cfg.op.neutral);
    return SparseStream<T>::from_dense({values.begin() + r.begin, values.begin() + r.end},
                                       cfg.policy, cfg.op.neutral);
  };
  auto receive_chunk = [&](int c, bool reduce) {
    const auto r = chunks[static_cast<std::size_t>(c)];
    auto in = detail::recv_stream(ep, left, cfg);
    if (in.dimension() != r.size()) throw DecodeError("ring chunk size mismatch");
    if (r.size() == 0) return;
    const auto incoming = in.logical();
    for (std::uint32_t i = 0; i < r.size(); ++i) {
      auto& dst = values[r.begin + i];
      dst = reduce ? cfg.op(incoming[i], dst) : incoming[i];
    }
  };

  for (int s = 0; s + 1 < p; ++s) {
    const int send_c = ((rank - s) % p + p) % p;
    const int recv_c = ((rank - s - 1) % p + p) % p;
    detail::send_stream(ep, right, chunk_stream(send_c), "ring-rs-" + std::to_string(s + 1));
    receive_chunk(recv_c, true);
  }
  for (int s = 0; s + 1 < p; ++s) {
    const int send_c = ((rank + 1 - s) % p + p) % p;
    const int recv_c = ((rank - s) % p + p) % p;
    detail::send_stream(ep, right, chunk_stream(send_c), "ring-ag-" + std::to_string(s + 1));
    receive_chunk(recv_c, false);
  }
  return SparseStream<T>::from_dense(std::move(values), cfg.policy, cfg.op.neutral);
}

// Auto's decision rule: DSAR once E[K] reaches the switch threshold (ties go
// dense), else recursive doubling for small E[K] payloads, else split.
template <Scalar T>
Algorithm select_algorithm(std::uint64_t estimated_k, std::uint32_t n, int p,
                           const CollectiveConfig<T>& cfg) {
  detail::require(n >= 1, "select_algorithm: empty universe");
  const auto k = std::min<std::uint64_t>(estimated_k, n);
  const double expected = expected_density_closed_form(k, n, static_cast<std::uint64_t>(p));
  const auto threshold = static_cast<double>(effective_threshold<T>(n, cfg.policy));
  if (expected >= threshold) return Algorithm::DsarSplitAllgather;
  if (expected * static_cast<double>(4 + sizeof(T)) <= static_cast<double>(cfg.small_message_bytes))
    return Algorithm::SsarRecursiveDouble;
  return Algorithm::SsarSplitAllgather;
}

template <Scalar T>
SparseStream<T> allreduce(const SparseStream<T>& local, const CollectiveConfig<T>& cfg,
                          Endpoint& ep, CollectiveStats* stats = nullptr);

template <Scalar T>
SparseStream<T> allreduce_auto(const SparseStream<T>& local, const CollectiveConfig<T>& cfg,
                               Endpoint& ep, CollectiveStats* stats = nullptr) {
  detail::require(cfg.algorithm == Algorithm::Auto, "allreduce_auto: config algorithm is not auto");
  detail::require(cfg.estimated_k.has_value(), "allreduce_auto: estimated_k is required");
  detail::require(!cfg.quantize_dense_phase, "quantized dense phase requires dsar_split_allgather");
  auto chosen = cfg;
  chosen.algorithm = select_algorithm(*cfg.estimated_k, local.dimension(), ep.size(), cfg);
  return allreduce(local, chosen, ep, stats);
}

template <Scalar T>
SparseStream<T> allreduce(const SparseStream<T>& local, const CollectiveConfig<T>& cfg,
                          Endpoint& ep, CollectiveStats* stats) {
  switch (cfg.algorithm) {
    case Algorithm::SsarRecursiveDouble: return allreduce_ssar_recursive_double(local, cfg, ep, stats);
    case Algorithm::SsarSplitAllgather: return allreduce_ssar_split_allgather(local, cfg, ep, stats);
    case Algorithm::DsarSplitAllgather: return allreduce_dsar_split_allgather(local, cfg, ep, stats);
    case Algorithm::DenseBaseline: return allreduce_dense_baseline(local, cfg, ep, stats);
    case Algorithm::Auto: return allreduce_auto(local, cfg, ep, stats);
  }
  throw InvalidArgument("allreduce: unknown algorithm");
}

// Concatenating allgather: every rank contributes a segment over its own
// range of [0, n); ranges must not overlap.
template <Scalar T>
SparseStream<T> allgather_sparse(const Segment<T>& local, std::uint32_t n,
                                 const CollectiveConfig<T>& cfg, Endpoint& ep) {
  cfg.validate();
  detail::require(local.stream.dimension() == local.range.size() && local.range.end <= n,
                  "allgather_sparse: segment does not match its range");
  const auto plan = fold_to_power_of_two(ep);
  std::vector<detail::WireSegment> held;
  held.push_back(detail::encode_segment(local.range.begin, local.stream));

  if (plan.partner && plan.surplus) {
    ep.send(*plan.partner, detail::encode_segments(held), "fold-pre", detail::total_volume(held));
  } else if (plan.partner) {
    for (auto& s : detail::decode_segments(ep.recv(*plan.partner))) held.push_back(std::move(s));
  }

  SparseStream<T> result;
  if (plan.active()) {
    const auto all = detail::gather_segments(ep, plan.active_size, std::move(held));
    result = detail::assemble<T>(all, n, cfg);
  }
  detail::fold_post(ep, plan, result, cfg);
  return result;
}

}  // namespace sparsecoll
