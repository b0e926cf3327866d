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

#pragma once

#include <array>
#include <string>
#include <string_view>

#include "sparsecoll/error.hpp"

namespace sparsecoll {

enum class Algorithm {
  SsarRecursiveDouble,
  SsarSplitAllgather,
  DsarSplitAllgather,
  DenseBaseline,
  Auto,
};

inline constexpr std::array<Algorithm, 4> kConcreteAlgorithms = {
    Algorithm::SsarRecursiveDouble, Algorithm::SsarSplitAllgather,
    Algorithm::DsarSplitAllgather, Algorithm::DenseBaseline};

inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::SsarRecursiveDouble: return "ssar_recursive_double";
    case Algorithm::SsarSplitAllgather: return "ssar_split_allgather";
    case Algorithm::DsarSplitAllgather: return "dsar_split_allgather";
    case Algorithm::DenseBaseline: return "dense_baseline";
    case Algorithm::Auto: return "auto";
  }
  return "?";
}

inline Algorithm parse_algorithm(std::string_view name) {
  for (auto a : {Algorithm::SsarRecursiveDouble, Algorithm::SsarSplitAllgather,
                 Algorithm::DsarSplitAllgather, Algorithm::DenseBaseline, Algorithm::Auto})
    if (name == to_string(a)) return a;
  throw InvalidArgument("unknown algorithm: " + std::string(name));
}

}  // namespace sparsecoll
