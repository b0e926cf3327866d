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

// Data-parallel SGD with error-feedback TopK sparsification.
//
// Per step and rank:
//   acc      = residual + lr_t * grad(model)
//   residual = acc - TopK(acc)
//   g        = allreduce(TopK(acc), SUM)      (quantized inside DSAR if set)
//   model    = model - g
// The sum is not divided by P unless `average` is set.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "sparsecoll/collectives.hpp"
#include "sparsecoll/dataset.hpp"
#include "sparsecoll/error.hpp"
#include "sparsecoll/sparse_stream.hpp"
#include "sparsecoll/transport.hpp"

namespace sparsecoll {

template <Scalar T>
struct TopKSelection {
  SparseStream<T> selected;
  std::vector<T> residual;
};

// Keeps the k largest-magnitude non-zero entries of every bucket of
// `bucket_size` consecutive values (ties go to the lower index). The
// residual is `values` with the selected positions zeroed, so
// selected + residual == values exactly.
template <Scalar T>
TopKSelection<T> topk_select(std::span<const T> values, std::uint32_t k, std::uint32_t bucket_size,
                             StreamPolicy policy = {}) {
  detail::require(k >= 1, "topk_select: k must be positive");
  detail::require(bucket_size >= 1, "topk_select: bucket size must be positive");
  detail::require(k <= bucket_size, "topk_select: k exceeds bucket size");
  detail::require(!values.empty(), "topk_select: empty input");

  TopKSelection<T> out;
  out.residual.assign(values.begin(), values.end());
  std::vector<Entry<T>> entries;
  std::vector<std::uint32_t> candidates;
  for (std::size_t begin = 0; begin < values.size(); begin += bucket_size) {
    const auto end = std::min(values.size(), begin + bucket_size);
    candidates.clear();
    for (auto i = begin; i < end; ++i)
      if (values[i] != T{0}) candidates.push_back(static_cast<std::uint32_t>(i));
    if (candidates.size() > k) {
      auto larger = [&](std::uint32_t a, std::uint32_t b) {
        const auto ma = std::abs(values[a]), mb = std::abs(values[b]);
        return ma > mb || (ma == mb && a < b);
      };
      std::nth_element(candidates.begin(), candidates.begin() + k, candidates.end(), larger);
      candidates.resize(k);
      std::sort(candidates.begin(), candidates.end());
    }
    for (auto i : candidates) {
      entries.push_back({i, values[i]});
      out.residual[i] = T{0};
    }
  }
  out.selected = SparseStream<T>::from_entries(static_cast<std::uint32_t>(values.size()),
                                               std::move(entries), policy);
  return out;
}

enum class Loss { Logistic, Hinge };

inline const char* to_string(Loss l) { return l == Loss::Logistic ? "logistic" : "hinge"; }

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Mini-batch gradients of a linear classifier over sparse rows, with
// optional L2 regularization (lambda/2 * |w|^2 added to the mean loss).
class GradientOracle {
 public:
  GradientOracle(const Dataset& data, Loss loss, double l2 = 0.0)
      : data_(&data), loss_(loss), l2_(l2) {
    detail::require(l2 >= 0.0, "gradient oracle: l2 must be non-negative");
  }

  const Dataset& data() const { return *data_; }
  std::uint32_t dimension() const { return data_->dimension; }
  Loss loss() const { return loss_; }
  double l2() const { return l2_; }

  template <Scalar T>
  double margin(std::span<const T> model, std::size_t row) const {
    double dot = 0.0;
    const auto c = data_->row_cols(row);
    const auto v = data_->row_vals(row);
    for (std::size_t j = 0; j < c.size(); ++j) dot += static_cast<double>(model[c[j]]) * v[j];
    return data_->labels[row] * dot;
  }

  // out += scale * mean gradient over `rows` (+ scale * l2 * model).
  template <Scalar T>
  void accumulate(std::span<const T> model, std::span<const std::size_t> rows, double scale,
                  std::span<T> out) const {
    if (!rows.empty()) {
      const double inv = scale / static_cast<double>(rows.size());
      for (auto row : rows) {
        const double m = margin(model, row);
        double dloss;  // d loss / d margin
        if (loss_ == Loss::Logistic) {
          dloss = -1.0 / (1.0 + std::exp(m));
        } else {
          dloss = m < 1.0 ? -1.0 : 0.0;
        }
        if (dloss == 0.0) continue;
        const double coef = inv * dloss * data_->labels[row];
        const auto c = data_->row_cols(row);
        const auto v = data_->row_vals(row);
        for (std::size_t j = 0; j < c.size(); ++j) out[c[j]] += static_cast<T>(coef * v[j]);
      }
    }
    if (l2_ > 0.0)
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += static_cast<T>(scale * l2_ * model[i]);
  }

  template <Scalar T>
  EvalResult evaluate(std::span<const T> model) const {
    EvalResult r;
    const auto n = data_->rows();
    if (n == 0) return r;
    double correct = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double m = margin(model, i);
      r.loss += loss_ == Loss::Logistic ? (m > 0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m)))
                                        : std::max(0.0, 1.0 - m);
      if (m > 0.0) correct += 1.0;
    }
    r.loss /= static_cast<double>(n);
    if (l2_ > 0.0) {
      double sq = 0.0;
      for (T w : model) sq += static_cast<double>(w) * w;
      r.loss += 0.5 * l2_ * sq;
    }
    r.accuracy = correct / static_cast<double>(n);
    return r;
  }

 private:
  const Dataset* data_;
  Loss loss_;
  double l2_;
};

// lr_t = lr0 / (1 + t / decay_steps); decay_steps = 0 keeps it constant.
struct LearningRate {
  double lr0 = 0.1;
  double decay_steps = 0.0;

  double at(std::uint64_t t) const {
    return decay_steps > 0.0 ? lr0 / (1.0 + static_cast<double>(t) / decay_steps) : lr0;
  }
};

template <Scalar T>
struct TopKState {
  std::vector<T> residual;
  std::vector<T> model;
  LearningRate lr;
  std::uint32_t topk = 8;
  std::uint32_t bucket_size = 512;
  bool average = false;
  std::uint64_t step = 0;

  static TopKState init(std::uint32_t dimension, LearningRate lr, std::uint32_t topk,
                        std::uint32_t bucket_size) {
    TopKState s;
    s.residual.assign(dimension, T{0});
    s.model.assign(dimension, T{0});
    s.lr = lr;
    s.topk = topk;
    s.bucket_size = bucket_size;
    return s;
  }
};

struct StepInfo {
  std::size_t selected = 0;
  double learning_rate = 0.0;
};

template <Scalar T>
StepInfo sgd_step(TopKState<T>& state, const GradientOracle& oracle,
                  std::span<const std::size_t> batch, Endpoint& ep, const CollectiveConfig<T>& cfg,
                  std::vector<T>* applied = nullptr) {
  const auto n = state.model.size();
  detail::require(n == oracle.dimension() && state.residual.size() == n,
                  "sgd_step: state dimension does not match the oracle");
  StepInfo info;
  info.learning_rate = state.lr.at(state.step);

  std::vector<T> acc = state.residual;
  oracle.accumulate<T>(state.model, batch, info.learning_rate, acc);
  for (T v : acc)
    if (!std::isfinite(v)) throw TrainingError("non-finite gradient at step " + std::to_string(state.step));

  auto sel = topk_select<T>(acc, state.topk, state.bucket_size, cfg.policy);
  state.residual = std::move(sel.residual);
  info.selected = sel.selected.is_sparse() ? sel.selected.entries().size() : sel.selected.count_non_fill();

  auto step_cfg = cfg;
  if (step_cfg.quantize_dense_phase)
    step_cfg.quantize_dense_phase->seed = detail::splitmix64(cfg.quantize_dense_phase->seed + state.step);
  const auto g = allreduce(sel.selected, step_cfg, ep);
  const auto update = g.logical();
  const T divisor = state.average ? static_cast<T>(ep.size()) : T{1};
  for (std::size_t i = 0; i < n; ++i) state.model[i] -= update[i] / divisor;
  if (applied) *applied = sel.selected.logical();
  ++state.step;
  return info;
}

struct TrainConfig {
  Loss loss = Loss::Logistic;
  double l2 = 0.0;
  int epochs = 10;
  std::size_t batch = 32;
  LearningRate lr;
  std::uint32_t topk = 8;
  std::uint32_t bucket_size = 512;
  Algorithm algorithm = Algorithm::SsarSplitAllgather;
  std::optional<QuantizationScheme> quantization;
  StreamPolicy policy;
  bool average = false;
  bool shuffle = true;
  std::uint64_t seed = 1;
};

struct MetricsRow {
  int epoch = 0;
  int rank = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  std::uint64_t bytes_sent = 0;
  double mean_selected_density = 0.0;
};

// Runs cfg.epochs passes over the data, sharded round-robin across ranks.
// Rows: epoch 0 holds the initial model's metrics; bytes are per epoch.
template <Scalar T = float>
std::vector<MetricsRow> train(const TrainConfig& cfg, const Dataset& data, World& world) {
  detail::require(cfg.epochs >= 0, "train: epochs must be non-negative");
  detail::require(cfg.batch >= 1, "train: batch must be positive");
  const int p = world.size();
  const GradientOracle oracle(data, cfg.loss, cfg.l2);
  CollectiveConfig<T> ccfg;
  ccfg.algorithm = cfg.algorithm;
  ccfg.quantize_dense_phase = cfg.quantization;
  ccfg.policy = cfg.policy;
  if (cfg.algorithm == Algorithm::Auto) ccfg.estimated_k = cfg.topk * bucket_count(data.dimension, cfg.bucket_size);
  ccfg.validate();

  const std::size_t shard_max = (data.rows() + static_cast<std::size_t>(p) - 1) / static_cast<std::size_t>(p);
  const std::size_t steps_per_epoch = (shard_max + cfg.batch - 1) / cfg.batch;

  auto per_rank = run_ranks(world, [&](Endpoint& ep) {
    const int rank = ep.rank();
    std::vector<std::size_t> shard;
    for (std::size_t i = static_cast<std::size_t>(rank); i < data.rows(); i += static_cast<std::size_t>(p))
      shard.push_back(i);
    auto state = TopKState<T>::init(data.dimension, cfg.lr, cfg.topk, cfg.bucket_size);
    state.average = cfg.average;

    std::vector<MetricsRow> rows;
    const auto initial = oracle.evaluate<T>(state.model);
    rows.push_back({0, rank, initial.loss, initial.accuracy, 0, 0.0});
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
      if (cfg.shuffle) {
        std::mt19937_64 rng(detail::splitmix64(cfg.seed ^ detail::splitmix64(
                                                   (static_cast<std::uint64_t>(epoch) << 20) + rank)));
        std::shuffle(shard.begin(), shard.end(), rng);
      }
      const auto bytes_before = ep.world().bytes_sent_by(rank);
      double density_sum = 0.0;
      for (std::size_t s = 0; s < steps_per_epoch; ++s) {
        const auto begin = std::min(shard.size(), s * cfg.batch);
        const auto end = std::min(shard.size(), begin + cfg.batch);
        const auto info = sgd_step<T>(state, oracle, std::span(shard).subspan(begin, end - begin), ep, ccfg);
        density_sum += static_cast<double>(info.selected) / data.dimension;
      }
      const auto eval = oracle.evaluate<T>(state.model);
      if (!std::isfinite(eval.loss)) throw TrainingError("loss diverged at epoch " + std::to_string(epoch));
      rows.push_back({epoch, rank, eval.loss, eval.accuracy, ep.world().bytes_sent_by(rank) - bytes_before,
                      steps_per_epoch ? density_sum / static_cast<double>(steps_per_epoch) : 0.0});
    }
    return rows;
  });

  std::vector<MetricsRow> out;
  for (int epoch = 0; epoch <= cfg.epochs; ++epoch)
    for (const auto& rows : per_rank) out.push_back(rows[static_cast<std::size_t>(epoch)]);
  return out;
}

}  // namespace sparsecoll
