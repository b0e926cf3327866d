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

// Latency-bandwidth cost model for the sparse collectives.
//
// A message of L units costs alpha + beta * L, with beta_s per index/value
// pair and beta_d per dense word (beta_d < beta_s). Bounds are stated per
// rank for power-of-two P and k non-zeros per rank; folding for other P is
// accounted separately (stages "fold-pre"/"fold-post").
//
// The expected-density functions model K = |union of the ranks' index
// sets| when every rank picks k distinct indices uniformly from [0, N).

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "sparsecoll/algorithm.hpp"
#include "sparsecoll/error.hpp"
#include "sparsecoll/sparse_stream.hpp"
#include "sparsecoll/transport.hpp"

namespace sparsecoll {

struct CostModelParams {
  double alpha = 1000.0;
  double beta_d = 1.0;
  double beta_s = 2.0;

  void validate() const {
    detail::require(alpha >= 0.0, "cost model: alpha must be non-negative");
    detail::require(beta_d > 0.0 && beta_s > beta_d, "cost model: need beta_s > beta_d > 0");
  }

  double message_cost(const StageTotals& t) const {
    return alpha * static_cast<double>(t.messages) + beta_s * static_cast<double>(t.pairs) +
           beta_d * static_cast<double>(t.dense_words);
  }
};

struct ProblemShape {
  std::uint64_t P = 1;
  std::uint64_t N = 1;
  std::uint64_t k = 1;

  double density() const { return static_cast<double>(k) / static_cast<double>(N); }

  void validate() const {
    detail::require(P >= 1, "problem shape: P must be at least 1");
    detail::require(k >= 1 && k <= N, "problem shape: need 1 <= k <= N");
  }

  // Range any reduction result size must fall in: [k, min(N, P k)].
  std::uint64_t min_result() const { return k; }
  std::uint64_t max_result() const { return std::min(N, P * k); }
};

struct CostBounds {
  double latency = 0.0;
  double bandwidth_lower = 0.0;
  double bandwidth_upper = 0.0;

  double lower() const { return latency + bandwidth_lower; }
  double upper() const { return latency + bandwidth_upper; }
};

inline double log2_exact(std::uint64_t p) { return static_cast<double>(std::bit_width(p) - 1); }

inline CostBounds predict_bounds(Algorithm algorithm, const ProblemShape& shape,
                                 const CostModelParams& params) {
  shape.validate();
  params.validate();
  detail::require(std::has_single_bit(shape.P), "predict_bounds: P must be a power of two");
  const double P = static_cast<double>(shape.P);
  const double N = static_cast<double>(shape.N);
  const double k = static_cast<double>(shape.k);
  const double lg = log2_exact(shape.P);
  const double l1 = lg * params.alpha;
  const double l2 = (P - 1.0) * params.alpha + l1;

  switch (algorithm) {
    case Algorithm::SsarRecursiveDouble:
      return {l1, lg * k * params.beta_s, (P - 1.0) * k * params.beta_s};
    case Algorithm::SsarSplitAllgather:
      return {l2, 2.0 * (P - 1.0) / P * k * params.beta_s, P * k * params.beta_s};
    case Algorithm::DsarSplitAllgather:
      return {l2, (P - 1.0) / P * N * params.beta_d,
              k * params.beta_s + (P - 1.0) / P * N * params.beta_d};
    case Algorithm::DenseBaseline: {
      // Ring reduce-scatter + ring allgather: each rank forwards every chunk
      // but two, so the extremes follow from the largest/smallest chunk.
      const auto ranges = partition_ranges(static_cast<std::uint32_t>(shape.N),
                                           static_cast<int>(shape.P));
      std::uint32_t lo = ranges.front().size(), hi = lo;
      for (const auto& r : ranges) {
        lo = std::min(lo, r.size());
        hi = std::max(hi, r.size());
      }
      return {2.0 * (P - 1.0) * params.alpha, 2.0 * (N - hi) * params.beta_d,
              2.0 * (N - lo) * params.beta_d};
    }
    case Algorithm::Auto:
      break;
  }
  throw InvalidArgument("predict_bounds: unknown algorithm");
}

// Rabenseifner reduce-scatter + allgather on k-element inputs, the dense
// large-message reference: 2 log2(P) alpha + 2 (P-1)/P k beta.
inline double rabenseifner_reference(const ProblemShape& shape, const CostModelParams& params) {
  shape.validate();
  const double P = static_cast<double>(shape.P);
  return 2.0 * std::log2(P) * params.alpha +
         2.0 * (P - 1.0) / P * static_cast<double>(shape.k) * params.beta_s;
}

struct DsarLowerBound {
  double time = 0.0;
  // Best possible bandwidth speedup over a bandwidth-optimal dense allreduce.
  double max_speedup = 0.0;
};

// Lower bound for any allreduce whose result has K >= kappa * N non-zeros,
// i.e. must end up dense.
inline DsarLowerBound dsar_lower_bound(const ProblemShape& shape, const CostModelParams& params,
                                       double kappa) {
  detail::require(kappa > 0.0 && kappa <= 1.0, "dsar_lower_bound: kappa must lie in (0, 1]");
  detail::require(shape.P >= 1 && shape.N >= 1, "dsar_lower_bound: invalid shape");
  return {std::log2(static_cast<double>(shape.P)) * params.alpha +
              kappa * static_cast<double>(shape.N) * params.beta_d,
          2.0 / kappa};
}

// E[K] = N (1 - (1 - k/N)^P), the closed form of the inclusion-exclusion sum
// N * sum_{i=1..P} (-1)^(i-1) C(P, i) (k/N)^i.
inline double expected_density_closed_form(std::uint64_t k, std::uint64_t N, std::uint64_t P) {
  detail::require(N >= 1, "expected density: N must be positive");
  detail::require(k <= N, "expected density: k must not exceed N");
  detail::require(P >= 1, "expected density: P must be at least 1");
  // P = 1 and k = N are exact; expm1(log1p(-x)) * N can land an ulp off.
  if (k == N || P == 1) return static_cast<double>(k);
  const double n = static_cast<double>(N);
  const double miss = std::log1p(-static_cast<double>(k) / n);
  return std::min(-n * std::expm1(static_cast<double>(P) * miss), static_cast<double>(std::min(N, P * k)));
}

struct MonteCarloEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
  std::uint64_t trials = 0;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  return std::uniform_int_distribution<std::uint64_t>(0, bound - 1)(rng);
}

}  // namespace detail

// k distinct indices from [0, n), uniformly (Floyd's algorithm), sorted.
inline std::vector<std::uint32_t> sample_distinct(std::mt19937_64& rng, std::uint32_t k,
                                                  std::uint32_t n) {
  detail::require(k <= n, "sample_distinct: k exceeds n");
  std::vector<std::uint32_t> out;
  out.reserve(k);
  if (k * 4ull >= n) {
    std::vector<std::uint32_t> all(n);
    std::iota(all.begin(), all.end(), 0u);
    for (std::uint32_t i = 0; i < k; ++i) {
      const auto j = i + static_cast<std::uint32_t>(detail::uniform_below(rng, n - i));
      std::swap(all[i], all[j]);
    }
    out.assign(all.begin(), all.begin() + k);
  } else {
    std::vector<bool> taken(n, false);
    for (std::uint32_t j = n - k; j < n; ++j) {
      auto t = static_cast<std::uint32_t>(detail::uniform_below(rng, j + 1ull));
      if (taken[t]) t = j;
      taken[t] = true;
      out.push_back(t);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Monte Carlo estimate of E[|H_1 u ... u H_P|] where sampler(rng, node, out)
// fills node's index set. Trial t uses its own generator seeded from
// (seed, t), so trials are independent of evaluation order.
template <class Sampler>
MonteCarloEstimate expected_union_monte_carlo(std::uint32_t N, std::uint64_t P,
                                              std::uint64_t trials, std::uint64_t seed,
                                              Sampler&& sampler) {
  detail::require(trials >= 1, "monte carlo: need at least one trial");
  detail::require(N >= 1 && P >= 1, "monte carlo: invalid shape");
  std::vector<std::uint64_t> stamp(N, 0);
  std::vector<std::uint32_t> indices;
  double sum = 0.0, sum_sq = 0.0;
  for (std::uint64_t t = 0; t < trials; ++t) {
    std::mt19937_64 rng(detail::splitmix64(seed ^ detail::splitmix64(t)));
    std::uint64_t count = 0;
    for (std::uint64_t node = 0; node < P; ++node) {
      indices.clear();
      sampler(rng, node, indices);
      for (auto i : indices) {
        detail::require(i < N, "monte carlo: sampler produced index out of range");
        if (stamp[i] != t + 1) {
          stamp[i] = t + 1;
          ++count;
        }
      }
    }
    sum += static_cast<double>(count);
    sum_sq += static_cast<double>(count) * static_cast<double>(count);
  }
  const double n = static_cast<double>(trials);
  const double mean = sum / n;
  const double var = trials > 1 ? std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0)) : 0.0;
  return {mean, std::sqrt(var / n), trials};
}

inline MonteCarloEstimate expected_density_monte_carlo(std::uint32_t k, std::uint32_t N,
                                                       std::uint64_t P, std::uint64_t trials,
                                                       std::uint64_t seed) {
  detail::require(k <= N, "monte carlo: k must not exceed N");
  return expected_union_monte_carlo(
      N, P, trials, seed, [&](std::mt19937_64& rng, std::uint64_t, std::vector<std::uint32_t>& out) {
        out = sample_distinct(rng, k, N);
      });
}

struct RankCost {
  int rank = 0;
  StageTotals totals;
  double measured = 0.0;
  bool within = false;  // at or under the upper bound
};

struct TraceReport {
  Algorithm algorithm = Algorithm::SsarRecursiveDouble;
  ProblemShape shape;
  // Bounds the trace is checked against.
  CostBounds bounds;
  // The closed-form bounds at the caller's k. Split-allgather's upper bound
  // assumes no reduced partition exceeds k entries; when one does, `bounds`
  // re-evaluates the upper bound at effective_k and this keeps the original.
  CostBounds nominal_bounds;
  std::uint64_t effective_k = 0;
  bool exceeds_nominal = false;
  std::vector<RankCost> ranks;
  // Per stage, the costliest rank's totals and cost.
  std::map<std::string, StageTotals> stage_max;
  std::map<std::string, double> stage_cost_max;
  double max_measured = 0.0;
  bool ok = true;
  // Empty when ok; otherwise "rank R, stage S: ...".
  std::string violation;
};

inline bool is_fold_stage(const std::string& stage) { return stage.rfind("fold-", 0) == 0; }

// Evaluates alpha * messages + beta_s * pairs + beta_d * dense words per rank
// (folding stages excluded) and checks the ranks against predict_bounds.
inline TraceReport validate_trace(const TraceSummary& summary, Algorithm algorithm,
                                  const ProblemShape& shape, const CostModelParams& params) {
  TraceReport rep;
  rep.algorithm = algorithm;
  rep.shape = shape;
  rep.nominal_bounds = predict_bounds(algorithm, shape, params);
  rep.bounds = rep.nominal_bounds;
  rep.effective_k = shape.k;
  if (algorithm == Algorithm::SsarSplitAllgather) {
    // The first allgather message of each rank is its reduced partition.
    for (const auto& stages : summary.rank_stages)
      if (auto it = stages.find("ag-stage-1"); it != stages.end())
        rep.effective_k = std::max<std::uint64_t>(rep.effective_k, it->second.pairs + it->second.dense_words);
    if (rep.effective_k > shape.k) {
      auto wide = shape;
      wide.k = std::min(rep.effective_k, shape.N);
      rep.bounds.bandwidth_upper = predict_bounds(algorithm, wide, params).bandwidth_upper;
    }
  }
  const double slack = 1e-9 * std::max(1.0, rep.bounds.upper());

  for (std::size_t r = 0; r < summary.rank_stages.size(); ++r) {
    RankCost rc;
    rc.rank = static_cast<int>(r);
    std::string worst_stage;
    double worst_cost = -1.0;
    for (const auto& [stage, t] : summary.rank_stages[r]) {
      if (is_fold_stage(stage)) continue;
      rc.totals.messages += t.messages;
      rc.totals.bytes += t.bytes;
      rc.totals.pairs += t.pairs;
      rc.totals.dense_words += t.dense_words;
      const double c = params.message_cost(t);
      if (c > worst_cost) {
        worst_cost = c;
        worst_stage = stage;
      }
      auto& m = rep.stage_max[stage];
      if (c > rep.stage_cost_max[stage]) {
        rep.stage_cost_max[stage] = c;
        m = t;
      }
    }
    rc.measured = params.message_cost(rc.totals);
    rc.within = rc.measured <= rep.bounds.upper() + slack;
    rep.max_measured = std::max(rep.max_measured, rc.measured);
    if (rc.measured > rep.nominal_bounds.upper() + slack) rep.exceeds_nominal = true;
    if (!rc.within && rep.ok) {
      rep.ok = false;
      rep.violation = "rank " + std::to_string(r) + ", stage " + worst_stage + ": measured " +
                      std::to_string(rc.measured) + " above upper bound " + std::to_string(rep.bounds.upper());
    }
    rep.ranks.push_back(rc);
  }
  // The bounds are on completion time, i.e. the costliest rank: every rank
  // stays under the upper bound and the slowest one reaches the lower.
  if (!rep.ranks.empty() && rep.max_measured < rep.nominal_bounds.lower() - slack) {
    rep.exceeds_nominal = true;
    if (rep.ok) {
      rep.ok = false;
      rep.violation = "costliest rank measured " + std::to_string(rep.max_measured) + " below lower bound " +
                      std::to_string(rep.bounds.lower());
    }
  }
  return rep;
}

// CSV columns: algorithm,P,N,k,d,stage,messages,pair_volume,dense_volume,
// predicted_lower,predicted_upper,measured. One row per stage (costliest
// rank) and a final "total" row (costliest rank overall).
inline void write_report_header(std::ostream& os) {
  os << "algorithm,P,N,k,d,stage,messages,pair_volume,dense_volume,predicted_lower,"
        "predicted_upper,measured\n";
}

inline void write_report_csv(std::ostream& os, const TraceReport& rep) {
  const auto prefix = [&] {
    os << to_string(rep.algorithm) << ',' << rep.shape.P << ',' << rep.shape.N << ',' << rep.shape.k
       << ',' << rep.shape.density() << ',';
  };
  for (const auto& [stage, t] : rep.stage_max) {
    prefix();
    os << stage << ',' << t.messages << ',' << t.pairs << ',' << t.dense_words << ",,,"
       << rep.stage_cost_max.at(stage) << '\n';
  }
  const RankCost* worst = nullptr;
  for (const auto& rc : rep.ranks)
    if (!worst || rc.measured > worst->measured) worst = &rc;
  prefix();
  os << "total," << (worst ? worst->totals.messages : 0) << ',' << (worst ? worst->totals.pairs : 0)
     << ',' << (worst ? worst->totals.dense_words : 0) << ',' << rep.bounds.lower() << ','
     << rep.bounds.upper() << ',' << rep.max_measured << '\n';
}

}  // namespace sparsecoll
