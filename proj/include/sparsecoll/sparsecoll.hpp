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

#include "sparsecoll/algorithm.hpp"
#include "sparsecoll/collectives.hpp"
#include "sparsecoll/cost_model.hpp"
#include "sparsecoll/dataset.hpp"
#include "sparsecoll/error.hpp"
#include "sparsecoll/experiments.hpp"
#include "sparsecoll/quantization.hpp"
#include "sparsecoll/socket_transport.hpp"
#include "sparsecoll/sparse_stream.hpp"
#include "sparsecoll/topk_sgd.hpp"
#include "sparsecoll/transport.hpp"
#include "sparsecoll/wire.hpp"
