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

#include <stdexcept>
#include <string>

namespace sparsecoll {

// Bad argument or violated precondition. Derives from std::invalid_argument
// so callers can catch it generically.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or truncated byte sequence.
class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Point-to-point layer failure: bad rank, world shut down, socket error.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse: double wait, outstanding handles, collective call mismatch
// (detected by the watchdog).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite gradients or diverging loss during training.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <class E>
[[noreturn]] inline void fail(const std::string& what) {
  throw E(what);
}

template <class E = InvalidArgument>
inline void require(bool cond, const char* what) {
  if (!cond) throw E(what);
}

}  // namespace detail
}  // namespace sparsecoll
