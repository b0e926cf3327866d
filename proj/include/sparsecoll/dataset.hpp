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

// Sparse binary-classification datasets: libsvm/svmlight text input and a
// synthetic linearly separable generator.

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sparsecoll/cost_model.hpp"
#include "sparsecoll/error.hpp"

namespace sparsecoll {

// CSR rows with labels in {-1, +1}.
struct Dataset {
  std::uint32_t dimension = 0;
  std::vector<double> labels;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::uint32_t> cols;
  std::vector<double> vals;

  std::size_t rows() const { return labels.size(); }

  std::span<const std::uint32_t> row_cols(std::size_t i) const {
    return std::span(cols).subspan(row_ptr[i], row_ptr[i + 1] - row_ptr[i]);
  }
  std::span<const double> row_vals(std::size_t i) const {
    return std::span(vals).subspan(row_ptr[i], row_ptr[i + 1] - row_ptr[i]);
  }

  void add_row(double label, std::span<const std::uint32_t> c, std::span<const double> v) {
    labels.push_back(label);
    cols.insert(cols.end(), c.begin(), c.end());
    vals.insert(vals.end(), v.begin(), v.end());
    row_ptr.push_back(cols.size());
  }

  double density() const {
    if (rows() == 0 || dimension == 0) return 0.0;
    return static_cast<double>(cols.size()) / (static_cast<double>(rows()) * dimension);
  }
};

// Parses "label idx:val idx:val ..." lines with 1-based indices. Labels <= 0
// map to -1, others to +1. `dimension` overrides the inferred max index.
inline Dataset read_libsvm(std::istream& in, std::optional<std::uint32_t> dimension = {}) {
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  std::uint32_t max_index = 0;
  std::vector<std::pair<std::uint32_t, double>> feats;
  std::vector<std::uint32_t> c;
  std::vector<double> v;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;
    const auto where = "libsvm line " + std::to_string(line_no) + ": ";
    double label = 0.0;
    try {
      label = std::stod(tok);
    } catch (const std::exception&) {
      throw InvalidArgument(where + "bad label '" + tok + "'");
    }
    feats.clear();
    while (ls >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos) throw InvalidArgument(where + "expected index:value");
      std::uint64_t idx = 0;
      auto [p, ec] = std::from_chars(tok.data(), tok.data() + colon, idx);
      if (ec != std::errc() || p != tok.data() + colon || idx == 0 || idx > 0xFFFFFFFFull)
        throw InvalidArgument(where + "bad feature index '" + tok + "'");
      double val = 0.0;
      try {
        val = std::stod(tok.substr(colon + 1));
      } catch (const std::exception&) {
        throw InvalidArgument(where + "bad feature value '" + tok + "'");
      }
      feats.emplace_back(static_cast<std::uint32_t>(idx - 1), val);
    }
    std::sort(feats.begin(), feats.end());
    c.clear();
    v.clear();
    for (std::size_t i = 0; i < feats.size(); ++i) {
      if (i > 0 && feats[i].first == feats[i - 1].first)
        throw InvalidArgument(where + "duplicate feature index");
      c.push_back(feats[i].first);
      v.push_back(feats[i].second);
      max_index = std::max(max_index, feats[i].first + 1);
    }
    ds.add_row(label > 0.0 ? 1.0 : -1.0, c, v);
  }
  ds.dimension = dimension.value_or(max_index);
  if (ds.dimension < max_index) throw InvalidArgument("libsvm: feature index exceeds dimension");
  if (ds.dimension == 0) ds.dimension = 1;
  return ds;
}

inline Dataset load_libsvm(const std::string& path, std::optional<std::uint32_t> dimension = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset '" + path + "'");
  return read_libsvm(in, dimension);
}

struct SyntheticSpec {
  std::size_t rows = 2000;
  std::uint32_t dimension = 1000;
  // Coordinates 0..informative-1 carry the separating direction.
  std::uint32_t informative = 10;
  // Non-zeros per row among informative / remaining coordinates.
  std::uint32_t informative_per_row = 4;
  std::uint32_t noise_per_row = 6;
  // Rows with |w.x| below this are resampled.
  double margin = 0.1;
  std::uint64_t seed = 7;
};

// Linearly separable data: labels are sign(w.x) for a hidden w supported on
// the informative coordinates.
inline Dataset make_synthetic_separable(const SyntheticSpec& spec) {
  detail::require(spec.informative >= 1 && spec.informative <= spec.dimension,
                  "synthetic: informative coordinates must fit the dimension");
  detail::require(spec.informative_per_row >= 1 && spec.informative_per_row <= spec.informative,
                  "synthetic: informative_per_row out of range");
  detail::require(spec.noise_per_row <= spec.dimension - spec.informative,
                  "synthetic: too many noise features");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> w(spec.informative);
  for (auto& x : w) x = gauss(rng) >= 0 ? 1.0 + std::abs(gauss(rng)) : -1.0 - std::abs(gauss(rng));

  Dataset ds;
  ds.dimension = spec.dimension;
  std::vector<std::pair<std::uint32_t, double>> feats;
  std::vector<std::uint32_t> c;
  std::vector<double> v;
  while (ds.rows() < spec.rows) {
    feats.clear();
    double dot = 0.0;
    for (auto i : sample_distinct(rng, spec.informative_per_row, spec.informative)) {
      const double x = gauss(rng);
      dot += w[i] * x;
      feats.emplace_back(i, x);
    }
    if (std::abs(dot) < spec.margin) continue;
    if (spec.noise_per_row > 0)
      for (auto i : sample_distinct(rng, spec.noise_per_row, spec.dimension - spec.informative))
        feats.emplace_back(spec.informative + i, gauss(rng));
    std::sort(feats.begin(), feats.end());
    c.clear();
    v.clear();
    for (auto& [i, x] : feats) {
      c.push_back(i);
      v.push_back(x);
    }
    ds.add_row(dot > 0.0 ? 1.0 : -1.0, c, v);
  }
  return ds;
}

}  // namespace sparsecoll
