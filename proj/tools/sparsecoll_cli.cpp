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

// sparsecoll: bench | density | train, CSV on stdout or --output.

#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sparsecoll/sparsecoll.hpp"

namespace sc = sparsecoll;

namespace {

struct Output {
  std::string path;
  std::ofstream file;

  std::ostream& open() {
    if (path.empty() || path == "-") return std::cout;
    file.open(path);
    if (!file) throw std::runtime_error("cannot open output '" + path + "'");
    return file;
  }
};

std::vector<sc::Algorithm> parse_algorithms(const std::vector<std::string>& names) {
  std::vector<sc::Algorithm> out;
  for (const auto& n : names) {
    if (n == "all") {
      out.insert(out.end(), sc::kConcreteAlgorithms.begin(), sc::kConcreteAlgorithms.end());
      continue;
    }
    const auto a = sc::parse_algorithm(n);
    if (a == sc::Algorithm::Auto) throw sc::InvalidArgument("bench: 'auto' needs an estimate; list algorithms explicitly");
    out.push_back(a);
  }
  return out;
}

void add_cost_flags(CLI::App* cmd, sc::CostModelParams& p) {
  cmd->add_option("--alpha", p.alpha, "Per-message latency")->capture_default_str();
  cmd->add_option("--beta-d", p.beta_d, "Cost per dense value")->capture_default_str();
  cmd->add_option("--beta-s", p.beta_s, "Cost per index-value pair")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse allreduce benchmarks, density experiments and TopK SGD training"};
  app.require_subcommand(1);
  Output out;

  sc::BenchSpec bench;
  std::vector<std::string> bench_algs{"all"};
  auto* b = app.add_subcommand("bench", "Run every algorithm over a P x N x d grid");
  b->add_option("-P,--ranks", bench.P, "Rank counts")->capture_default_str();
  b->add_option("-N,--dimension", bench.N, "Vector dimensions")->capture_default_str();
  b->add_option("-d,--density", bench.d, "Per-rank input densities k/N")->capture_default_str();
  b->add_option("-a,--algorithm", bench_algs, "Algorithms, or 'all'")->capture_default_str();
  b->add_option("--seed", bench.seeds, "Seeds")->capture_default_str();
  b->add_option("-r,--repetitions", bench.repetitions, "Repetitions per point")->capture_default_str();
  add_cost_flags(b, bench.params);
  b->add_option("-o,--output", out.path, "CSV path (default stdout)");

  sc::DensitySpec density;
  std::string density_alg = sc::to_string(density.algorithm);
  auto* d = app.add_subcommand("density", "Expected reduced size: closed form, Monte Carlo and measured");
  d->add_option("-N,--dimension", density.N, "Vector dimensions")->capture_default_str();
  d->add_option("-P,--ranks", density.P, "Rank counts")->capture_default_str();
  d->add_option("-k,--nnz", density.k, "Non-zeros per rank")->capture_default_str();
  d->add_option("--trials", density.trials, "Monte Carlo trials")->capture_default_str();
  d->add_option("--runs", density.runs, "Measured allreduce runs per point")->capture_default_str();
  d->add_option("--seed", density.seed, "Seed")->capture_default_str();
  d->add_option("-a,--algorithm", density_alg, "Algorithm for measured runs")->capture_default_str();
  d->add_option("-o,--output", out.path, "CSV path (default stdout)");

  sc::TrainConfig train;
  std::string data_path, train_alg = sc::to_string(train.algorithm), loss = "logistic";
  std::optional<std::uint32_t> data_dim;
  int ranks = 4;
  int quant_bits = 0;
  std::uint32_t quant_bucket = 1024;
  sc::SyntheticSpec synth;
  auto* t = app.add_subcommand("train", "TopK SGD with error feedback over a simulated world");
  t->add_option("--data", data_path, "libsvm file (synthetic separable data if omitted)");
  t->add_option("--data-dim", data_dim, "Feature dimension override for --data");
  t->add_option("--synthetic-rows", synth.rows, "Synthetic rows")->capture_default_str();
  t->add_option("--synthetic-dim", synth.dimension, "Synthetic dimension")->capture_default_str();
  t->add_option("--synthetic-seed", synth.seed, "Synthetic generator seed")->capture_default_str();
  t->add_option("-P,--ranks", ranks, "Ranks")->capture_default_str()->check(CLI::PositiveNumber);
  t->add_option("-a,--algorithm", train_alg, "Allreduce algorithm")->capture_default_str();
  t->add_option("--topk", train.topk, "Entries kept per bucket")->capture_default_str();
  t->add_option("--bucket-size", train.bucket_size, "TopK bucket size")->capture_default_str();
  t->add_option("--quant-bits", quant_bits, "Quantize the dense phase to this many bits (0 = off)")
      ->capture_default_str();
  t->add_option("--quant-bucket", quant_bucket, "Quantization bucket size")->capture_default_str();
  t->add_option("--epochs", train.epochs, "Epochs")->capture_default_str();
  t->add_option("--batch", train.batch, "Per-rank batch size")->capture_default_str();
  t->add_option("--lr", train.lr.lr0, "Initial learning rate")->capture_default_str();
  t->add_option("--lr-decay", train.lr.decay_steps, "Steps T in lr0/(1+t/T); 0 keeps lr constant")
      ->capture_default_str();
  t->add_option("--loss", loss, "logistic or hinge")->capture_default_str()->check(CLI::IsMember({"logistic", "hinge"}));
  t->add_option("--l2", train.l2, "L2 regularization")->capture_default_str();
  t->add_flag("--average", train.average, "Divide the summed update by P");
  t->add_option("--seed", train.seed, "Seed")->capture_default_str();
  t->add_option("-o,--output", out.path, "CSV path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto backend = sc::backend_from_env();
    const auto transport = sc::transport_options_from_env();
    if (*b) {
      bench.algorithms = parse_algorithms(bench_algs);
      bench.backend = backend;
      bench.transport = transport;
      bench.params.validate();
      const auto rows = sc::run_bench(bench);
      sc::write_bench_csv(out.open(), rows, bench.params);
      bool ok = true;
      for (const auto& r : rows) ok = ok && r.oracle_ok && r.bounds_status != "violation";
      if (!ok) std::cerr << "bench: correctness or bound check failed (see oracle_ok / bounds_status)\n";
      return ok ? 0 : 1;
    }
    if (*d) {
      density.algorithm = sc::parse_algorithm(density_alg);
      density.backend = backend;
      density.transport = transport;
      const auto rows = sc::run_density(density);
      sc::write_density_csv(out.open(), rows);
      bool ok = true;
      for (const auto& r : rows)
        ok = ok && r.oracle_ok && r.closed_form <= std::min<double>(r.N, static_cast<double>(r.P) * r.k) + 1e-9;
      if (!ok) std::cerr << "density: correctness check failed\n";
      return ok ? 0 : 1;
    }
    train.algorithm = sc::parse_algorithm(train_alg);
    train.loss = loss == "hinge" ? sc::Loss::Hinge : sc::Loss::Logistic;
    if (quant_bits > 0) train.quantization = sc::QuantizationScheme{quant_bits, quant_bucket, train.seed};
    const auto data = data_path.empty() ? sc::make_synthetic_separable(synth) : sc::load_libsvm(data_path, data_dim);
    auto world = sc::make_world(ranks, backend, transport);
    const auto rows = sc::train<float>(train, data, *world);
    sc::write_metrics_csv(out.open(), rows);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
