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

// Benchmark, density and training drivers behind the command-line tool.
// Grid points run sequentially, one World each, so output is a pure
// function of the sweep settings.

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <memory>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "sparsecoll/collectives.hpp"
#include "sparsecoll/cost_model.hpp"
#include "sparsecoll/socket_transport.hpp"
#include "sparsecoll/topk_sgd.hpp"
#include "sparsecoll/transport.hpp"

namespace sparsecoll {

// Shortest round-trip decimal form.
inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc() ? std::string(buf, end) : std::string("nan");
}

enum class Backend { Simulated, Socket };

// SPARSECOLL_BACKEND=sim|socket, SPARSECOLL_WATCHDOG_MS=<ms>.
inline Backend backend_from_env() {
  const char* b = std::getenv("SPARSECOLL_BACKEND");
  if (!b || std::string(b).empty() || std::string(b) == "sim") return Backend::Simulated;
  if (std::string(b) == "socket") return Backend::Socket;
  throw InvalidArgument(std::string("unknown SPARSECOLL_BACKEND '") + b + "'");
}

inline TransportOptions transport_options_from_env() {
  TransportOptions opt;
  if (const char* w = std::getenv("SPARSECOLL_WATCHDOG_MS")) opt.watchdog = std::chrono::milliseconds(std::atoll(w));
  return opt;
}

inline std::unique_ptr<World> make_world(int size, Backend backend, TransportOptions options = {}) {
  if (backend == Backend::Socket) return std::make_unique<SocketWorld>(size, options);
  return std::make_unique<SimulatedWorld>(size, options);
}

inline double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x243F6A8885A308D3ull;
  for (auto p : parts) h = detail::splitmix64(h ^ p);
  return h;
}

// Per-rank inputs: k distinct uniform indices with integer values in [1, 8],
// so sums are exact in F32 and never cancel.
template <Scalar T>
std::vector<SparseStream<T>> uniform_inputs(int p, std::uint32_t n, std::uint32_t k, std::uint64_t seed,
                                            StreamPolicy policy = {}) {
  std::vector<SparseStream<T>> out;
  for (int r = 0; r < p; ++r) {
    std::mt19937_64 rng(mix_seed({seed, static_cast<std::uint64_t>(r)}));
    std::vector<Entry<T>> entries;
    for (auto i : sample_distinct(rng, k, n))
      entries.push_back({i, static_cast<T>(1 + detail::uniform_below(rng, 8))});
    out.push_back(SparseStream<T>::from_entries(n, std::move(entries), policy));
  }
  return out;
}

template <Scalar T>
std::vector<T> dense_reference(const std::vector<SparseStream<T>>& inputs, const ReductionOp<T>& op) {
  std::vector<T> acc(inputs.front().dimension(), op.neutral);
  for (const auto& in : inputs) {
    const auto v = in.logical();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = op(acc[i], v[i]);
  }
  return acc;
}

template <Scalar T>
struct AllreduceRun {
  std::vector<SparseStream<T>> results;
  TraceSummary trace;
  std::vector<TraceRecord> records;
};

template <Scalar T>
AllreduceRun<T> run_allreduce(World& world, const std::vector<SparseStream<T>>& inputs,
                              const CollectiveConfig<T>& cfg) {
  AllreduceRun<T> run;
  run.results = run_ranks(world, [&](Endpoint& ep) {
    return allreduce(inputs[static_cast<std::size_t>(ep.rank())], cfg, ep);
  });
  run.trace = world.trace_summary();
  run.records = world.trace();
  return run;
}

struct BenchSpec {
  std::vector<int> P{2, 4, 8};
  std::vector<std::uint32_t> N{4096};
  std::vector<double> d{0.01};
  std::vector<Algorithm> algorithms{kConcreteAlgorithms.begin(), kConcreteAlgorithms.end()};
  std::vector<std::uint64_t> seeds{1};
  int repetitions = 1;
  CostModelParams params;
  StreamPolicy policy;
  Backend backend = Backend::Simulated;
  TransportOptions transport;
};

struct BenchRow {
  Algorithm algorithm;
  int P;
  std::uint32_t N;
  double d;
  std::uint32_t k;
  std::uint64_t seed;
  int repetitions;
  double cost_q25, cost_median, cost_q75;
  std::optional<CostBounds> bounds;
  std::uint64_t max_rank_bytes;
  bool oracle_ok;
  // Split-allgather: largest reduced partition when above k, which widens
  // the upper bound (see TraceReport).
  std::uint64_t effective_k = 0;
  bool exceeds_nominal = false;
  // "ok", "violation" (outside predicted bounds) or "n/a" (P not a power
  // of two: bounds exclude folding).
  std::string bounds_status;
};

inline std::uint32_t k_for_density(std::uint32_t n, double d) {
  return static_cast<std::uint32_t>(std::max(1.0, std::round(d * n)));
}

// Runs every algorithm on every grid point. Cost is the costliest rank's
// alpha-beta cost from the trace; quantiles are over repetitions.
inline std::vector<BenchRow> run_bench(const BenchSpec& spec, std::ostream* warn = &std::cerr) {
  detail::require(!spec.P.empty() && !spec.N.empty() && !spec.d.empty() && !spec.algorithms.empty() &&
                      !spec.seeds.empty(),
                  "bench: sweep lists must be non-empty");
  detail::require(spec.repetitions >= 1, "bench: repetitions must be at least 1");
  std::vector<BenchRow> rows;
  for (int p : spec.P)
    for (auto n : spec.N)
      for (double d : spec.d)
        for (auto seed : spec.seeds) {
          const auto k = k_for_density(n, d);
          if (k > n || d > 1.0) {
            if (warn) *warn << "bench: skipping infeasible point P=" << p << " N=" << n << " d=" << d << "\n";
            continue;
          }
          for (auto alg : spec.algorithms) {
            BenchRow row{alg, p, n, d, k, seed, spec.repetitions, 0, 0, 0, {}, 0, true, k, false, "n/a"};
            const bool pow2 = std::has_single_bit(static_cast<unsigned>(p));
            const ProblemShape shape{static_cast<std::uint64_t>(p), n, k};
            if (pow2) row.bounds = predict_bounds(alg, shape, spec.params);
            bool bounds_ok = true;
            std::vector<double> costs;
            for (int rep = 0; rep < spec.repetitions; ++rep) {
              const auto inputs = uniform_inputs<float>(
                  p, n, k, mix_seed({seed, static_cast<std::uint64_t>(rep), static_cast<std::uint64_t>(p), n, k}),
                  spec.policy);
              CollectiveConfig<float> cfg;
              cfg.algorithm = alg;
              cfg.policy = spec.policy;
              auto world = make_world(p, spec.backend, spec.transport);
              const auto run = run_allreduce(*world, inputs, cfg);
              const auto expect = dense_reference(inputs, cfg.op);
              for (const auto& r : run.results) row.oracle_ok = row.oracle_ok && r.logical() == expect;
              double worst = 0.0;
              for (int r = 0; r < p; ++r) {
                StageTotals t;
                for (const auto& [stage, s] : run.trace.rank_stages[static_cast<std::size_t>(r)]) {
                  if (is_fold_stage(stage)) continue;
                  t.messages += s.messages;
                  t.pairs += s.pairs;
                  t.dense_words += s.dense_words;
                }
                worst = std::max(worst, spec.params.message_cost(t));
                row.max_rank_bytes = std::max(row.max_rank_bytes, run.trace.bytes_sent[static_cast<std::size_t>(r)]);
              }
              costs.push_back(worst);
              if (pow2) {
                const auto rep = validate_trace(run.trace, alg, shape, spec.params);
                bounds_ok = bounds_ok && rep.ok;
                row.effective_k = std::max(row.effective_k, rep.effective_k);
                row.exceeds_nominal = row.exceeds_nominal || rep.exceeds_nominal;
                if (rep.bounds.upper() > row.bounds->upper()) row.bounds = rep.bounds;
              }
            }
            row.cost_q25 = quantile(costs, 0.25);
            row.cost_median = quantile(costs, 0.5);
            row.cost_q75 = quantile(costs, 0.75);
            if (pow2) row.bounds_status = bounds_ok ? "ok" : "violation";
            rows.push_back(std::move(row));
          }
        }
  return rows;
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows, const CostModelParams& params) {
  os << "algorithm,P,N,d,k,seed,repetitions,alpha,beta_d,beta_s,cost_q25,cost_median,cost_q75,predicted_lower,"
        "predicted_upper,max_rank_bytes,oracle_ok,effective_k,exceeds_nominal,bounds_status\n";
  for (const auto& r : rows) {
    os << to_string(r.algorithm) << ',' << r.P << ',' << r.N << ',' << format_double(r.d) << ',' << r.k << ','
       << r.seed << ',' << r.repetitions << ',' << format_double(params.alpha) << ','
       << format_double(params.beta_d) << ',' << format_double(params.beta_s) << ',' << format_double(r.cost_q25) << ','
       << format_double(r.cost_median) << ',' << format_double(r.cost_q75) << ','
       << (r.bounds ? format_double(r.bounds->lower()) : "") << ','
       << (r.bounds ? format_double(r.bounds->upper()) : "") << ',' << r.max_rank_bytes << ','
       << (r.oracle_ok ? 1 : 0) << ',' << r.effective_k << ',' << (r.exceeds_nominal ? 1 : 0) << ','
       << r.bounds_status << '\n';
  }
}

struct DensitySpec {
  std::vector<std::uint32_t> N{512};
  std::vector<int> P{1, 2, 4, 8, 16};
  std::vector<std::uint32_t> k{1, 4, 16, 64};
  std::uint64_t trials = 2000;
  int runs = 20;
  std::uint64_t seed = 1;
  Algorithm algorithm = Algorithm::SsarRecursiveDouble;
  Backend backend = Backend::Simulated;
  TransportOptions transport;
};

struct DensityRow {
  Algorithm algorithm;
  std::uint64_t seed;
  std::uint32_t N;
  int P;
  std::uint32_t k;
  double closed_form;
  MonteCarloEstimate mc;
  double measured_mean;
  double measured_stderr;
  int runs;
  bool within_3se;
  // Every run's result matched the dense reference at every rank.
  bool oracle_ok;
};

// Closed-form E[K], its Monte Carlo estimate, and the non-zero count of
// real allreduce results on uniform inputs.
inline std::vector<DensityRow> run_density(const DensitySpec& spec, std::ostream* warn = &std::cerr) {
  detail::require(!spec.N.empty() && !spec.P.empty() && !spec.k.empty(), "density: sweep lists must be non-empty");
  detail::require(spec.runs >= 1 && spec.trials >= 1, "density: runs and trials must be at least 1");
  std::vector<DensityRow> rows;
  for (auto n : spec.N)
    for (int p : spec.P)
      for (auto k : spec.k) {
        if (k > n || k == 0) {
          if (warn) *warn << "density: skipping infeasible point N=" << n << " k=" << k << "\n";
          continue;
        }
        DensityRow row{spec.algorithm, spec.seed, n, p, k, expected_density_closed_form(k, n, static_cast<std::uint64_t>(p)),
                       expected_density_monte_carlo(k, n, static_cast<std::uint64_t>(p), spec.trials,
                                                    mix_seed({spec.seed, n, static_cast<std::uint64_t>(p), k})),
                       0.0, 0.0, spec.runs, false, true};
        std::vector<double> counts;
        for (int run = 0; run < spec.runs; ++run) {
          const auto inputs = uniform_inputs<float>(
              p, n, k, mix_seed({spec.seed, 0xD5ull, n, static_cast<std::uint64_t>(p), k, static_cast<std::uint64_t>(run)}));
          CollectiveConfig<float> cfg;
          cfg.algorithm = spec.algorithm;
          auto world = make_world(p, spec.backend, spec.transport);
          const auto res = run_allreduce(*world, inputs, cfg);
          const auto expect = dense_reference(inputs, cfg.op);
          for (const auto& r : res.results) row.oracle_ok = row.oracle_ok && r.logical() == expect;
          counts.push_back(static_cast<double>(res.results.front().count_non_fill()));
        }
        double mean = 0.0;
        for (double c : counts) mean += c;
        mean /= static_cast<double>(counts.size());
        double var = 0.0;
        for (double c : counts) var += (c - mean) * (c - mean);
        row.measured_mean = mean;
        row.measured_stderr = counts.size() > 1 ? std::sqrt(var / static_cast<double>(counts.size() - 1) /
                                                            static_cast<double>(counts.size()))
                                                : 0.0;
        // Spread of one draw, estimated from the Monte Carlo sample.
        const double sd = row.mc.standard_error * std::sqrt(static_cast<double>(row.mc.trials));
        const double tol = 3.0 * sd / std::sqrt(static_cast<double>(spec.runs));
        row.within_3se = std::abs(row.measured_mean - row.closed_form) <= tol + 1e-9 * row.closed_form;
        rows.push_back(row);
      }
  return rows;
}

inline void write_density_csv(std::ostream& os, const std::vector<DensityRow>& rows) {
  os << "algorithm,seed,N,P,k,d,trials,closed_form,mc_mean,mc_stderr,measured_mean,measured_stderr,runs,"
        "within_3se,oracle_ok\n";
  for (const auto& r : rows) {
    os << to_string(r.algorithm) << ',' << r.seed << ',' << r.N << ',' << r.P << ',' << r.k << ',' << format_double(static_cast<double>(r.k) / r.N) << ','
       << r.mc.trials << ',' << format_double(r.closed_form) << ',' << format_double(r.mc.mean) << ','
       << format_double(r.mc.standard_error) << ',' << format_double(r.measured_mean) << ','
       << format_double(r.measured_stderr) << ',' << r.runs << ',' << (r.within_3se ? 1 : 0) << ','
       << (r.oracle_ok ? 1 : 0) << '\n';
  }
}

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
  os << "epoch,rank,loss,accuracy,bytes_sent,mean_selected_density\n";
  for (const auto& r : rows)
    os << r.epoch << ',' << r.rank << ',' << format_double(r.loss) << ',' << format_double(r.accuracy) << ','
       << r.bytes_sent << ',' << format_double(r.mean_selected_density) << '\n';
}

}  // namespace sparsecoll
