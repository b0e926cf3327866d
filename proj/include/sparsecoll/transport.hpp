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

// Point-to-point messaging between the ranks of a World.
//
// Every rank runs on its own thread inside one process. Sends are eager
// (buffered at the receiver), receives block until the next message on the
// ordered (src, dst) channel arrives. Each send appends a TraceRecord to the
// sender's trace, which is what the cost model consumes; nothing here models
// time.

#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <type_traits>
#include <utility>
#include <vector>

#include "sparsecoll/error.hpp"
#include "sparsecoll/wire.hpp"

namespace sparsecoll {

// Model volume of one message: index/value pairs and dense words.
struct Volume {
  std::uint64_t pairs = 0;
  std::uint64_t dense_words = 0;

  Volume& operator+=(const Volume& o) {
    pairs += o.pairs;
    dense_words += o.dense_words;
    return *this;
  }
  friend bool operator==(const Volume&, const Volume&) = default;
};

struct TraceRecord {
  int src = 0;
  int dst = 0;
  std::uint64_t payload_bytes = 0;
  std::uint32_t messages = 1;
  std::string stage;
  Volume volume;

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

struct StageTotals {
  std::uint64_t messages = 0;
  std::uint64_t bytes = 0;
  std::uint64_t pairs = 0;
  std::uint64_t dense_words = 0;

  void add(const TraceRecord& r) {
    messages += r.messages;
    bytes += r.payload_bytes;
    pairs += r.volume.pairs;
    dense_words += r.volume.dense_words;
  }
  friend bool operator==(const StageTotals&, const StageTotals&) = default;
};

struct TraceSummary {
  std::vector<std::uint64_t> bytes_sent;
  std::vector<std::uint64_t> messages_sent;
  std::vector<std::uint64_t> bytes_received;
  std::vector<std::uint64_t> messages_received;
  // Sent totals keyed by stage label, per rank and over all ranks.
  std::vector<std::map<std::string, StageTotals>> rank_stages;
  std::map<std::string, StageTotals> stages;

  std::uint64_t total_bytes() const {
    std::uint64_t t = 0;
    for (auto b : bytes_sent) t += b;
    return t;
  }
  std::uint64_t total_messages() const {
    std::uint64_t t = 0;
    for (auto m : messages_sent) t += m;
    return t;
  }
  StageTotals rank_totals(int rank) const {
    StageTotals t;
    for (const auto& [_, s] : rank_stages.at(static_cast<std::size_t>(rank))) {
      t.messages += s.messages;
      t.bytes += s.bytes;
      t.pairs += s.pairs;
      t.dense_words += s.dense_words;
    }
    return t;
  }
};

struct TransportOptions {
  // How long a receive may block before the call is declared mismatched.
  // Zero disables the watchdog.
  std::chrono::milliseconds watchdog{30000};
};

// Thrown into ranks that were still blocked when another rank failed.
class WorldAborted : public TransportError {
 public:
  using TransportError::TransportError;
};

class World;

namespace detail {

struct Channel {
  std::mutex mu;
  std::condition_variable cv;
  std::map<std::uint64_t, Bytes> arrived;
  std::uint64_t next_arrival = 0;
  std::uint64_t next_ticket = 0;
};

struct HandleState {
  World* world = nullptr;
  bool is_recv = false;
  int self = 0;
  int peer = 0;
  std::uint64_t ticket = 0;
  bool completed = false;
  bool waited = false;
  bool settled = false;  // counted out of World::outstanding_
  Bytes data;
};

}  // namespace detail

// Handle of a nonblocking send or receive. wait() may be called once.
class OpHandle {
 public:
  OpHandle() = default;

  bool valid() const { return state_ != nullptr; }
  // Non-blocking completion check; idempotent.
  bool test();
  // Blocks until done; returns the payload for receives, empty for sends.
  Bytes wait();

 private:
  friend class World;
  explicit OpHandle(std::shared_ptr<detail::HandleState> s) : state_(std::move(s)) {}
  std::shared_ptr<detail::HandleState> state_;
};

class Endpoint;

// Shared message queues and traces for `size` ranks. Backends differ only
// in how bytes travel from sender to the receiver's queue.
class World {
 public:
  explicit World(int size, TransportOptions options = {}) : size_(size), options_(options) {
    detail::require(size >= 1, "world size must be at least 1");
    channels_.resize(static_cast<std::size_t>(size) * static_cast<std::size_t>(size));
    for (auto& c : channels_) c = std::make_unique<detail::Channel>();
    traces_.resize(static_cast<std::size_t>(size));
    received_bytes_.assign(static_cast<std::size_t>(size), 0);
    sent_bytes_.assign(static_cast<std::size_t>(size), 0);
    received_messages_.assign(static_cast<std::size_t>(size), 0);
  }
  World(const World&) = delete;
  World& operator=(const World&) = delete;
  virtual ~World() = default;

  int size() const { return size_; }
  const TransportOptions& options() const { return options_; }
  virtual const char* backend_name() const = 0;

  Endpoint endpoint(int rank);

  void send(int src, int dst, Bytes payload, std::string stage, Volume volume = {}) {
    check_pair(src, dst);
    check_alive();
    traces_[static_cast<std::size_t>(src)].push_back(
        {src, dst, payload.size(), 1, std::move(stage), volume});
    sent_bytes_[static_cast<std::size_t>(src)] += payload.size();
    transmit(src, dst, std::move(payload));
  }

  Bytes recv(int self, int from) {
    check_pair(from, self);
    auto& ch = channel(from, self);
    std::uint64_t ticket;
    {
      std::lock_guard lock(ch.mu);
      ticket = ch.next_ticket++;
    }
    return take(self, from, ticket);
  }

  OpHandle isend(int src, int dst, Bytes payload, std::string stage, Volume volume = {}) {
    send(src, dst, std::move(payload), std::move(stage), volume);
    auto st = std::make_shared<detail::HandleState>();
    st->world = this;
    st->self = src;
    st->peer = dst;
    st->completed = true;
    ++outstanding_;
    return OpHandle(std::move(st));
  }

  OpHandle irecv(int self, int from) {
    check_pair(from, self);
    check_alive();
    auto& ch = channel(from, self);
    auto st = std::make_shared<detail::HandleState>();
    st->world = this;
    st->is_recv = true;
    st->self = self;
    st->peer = from;
    {
      std::lock_guard lock(ch.mu);
      st->ticket = ch.next_ticket++;
    }
    ++outstanding_;
    return OpHandle(std::move(st));
  }

  int outstanding() const { return outstanding_.load(); }

  // Bytes sent by `rank` so far. Call from that rank's thread, or after the
  // ranks have joined.
  std::uint64_t bytes_sent_by(int rank) const {
    return sent_bytes_.at(static_cast<std::size_t>(rank));
  }

  TraceSummary trace_summary() const {
    if (outstanding_.load() != 0)
      throw UsageError("trace_summary: nonblocking operations still outstanding");
    TraceSummary s;
    const auto n = static_cast<std::size_t>(size_);
    s.bytes_sent.assign(n, 0);
    s.messages_sent.assign(n, 0);
    s.rank_stages.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
      for (const auto& rec : traces_[r]) {
        s.bytes_sent[r] += rec.payload_bytes;
        s.messages_sent[r] += rec.messages;
        s.rank_stages[r][rec.stage].add(rec);
        s.stages[rec.stage].add(rec);
      }
    }
    s.bytes_received = received_bytes_;
    s.messages_received = received_messages_;
    return s;
  }

  // Records in rank order, each rank's in send order. Deterministic whenever
  // the algorithm is.
  std::vector<TraceRecord> trace() const {
    std::vector<TraceRecord> all;
    for (const auto& t : traces_) all.insert(all.end(), t.begin(), t.end());
    return all;
  }

  void clear_trace() {
    if (outstanding_.load() != 0)
      throw UsageError("clear_trace: nonblocking operations still outstanding");
    for (auto& t : traces_) t.clear();
    sent_bytes_.assign(sent_bytes_.size(), 0);
    received_bytes_.assign(received_bytes_.size(), 0);
    received_messages_.assign(received_messages_.size(), 0);
  }

  // Wakes every blocked receive with WorldAborted. Irreversible.
  void abort(const std::string& why) {
    {
      std::lock_guard lock(abort_mu_);
      if (aborted_.exchange(true)) return;
      abort_reason_ = why;
    }
    for (auto& c : channels_) {
      std::lock_guard lock(c->mu);
      c->cv.notify_all();
    }
  }
  bool aborted() const { return aborted_.load(); }

 protected:
  virtual void transmit(int src, int dst, Bytes payload) = 0;

  // Called by backends when a message from src reaches dst.
  void deliver(int src, int dst, Bytes payload) {
    auto& ch = channel(src, dst);
    {
      std::lock_guard lock(ch.mu);
      ch.arrived.emplace(ch.next_arrival++, std::move(payload));
    }
    ch.cv.notify_all();
  }

 private:
  friend class OpHandle;

  detail::Channel& channel(int src, int dst) {
    return *channels_[static_cast<std::size_t>(src) * static_cast<std::size_t>(size_) +
                      static_cast<std::size_t>(dst)];
  }

  void check_pair(int src, int dst) const {
    if (src < 0 || src >= size_ || dst < 0 || dst >= size_)
      throw TransportError("invalid rank");
    if (src == dst) throw TransportError("self messages are not supported");
  }

  void check_alive() const {
    if (aborted_.load()) {
      std::lock_guard lock(abort_mu_);
      throw WorldAborted("world shut down: " + abort_reason_);
    }
  }

  Bytes take(int self, int from, std::uint64_t ticket) {
    auto& ch = channel(from, self);
    std::unique_lock lock(ch.mu);
    auto ready = [&] { return aborted_.load() || ch.arrived.count(ticket) != 0; };
    if (options_.watchdog.count() > 0) {
      if (!ch.cv.wait_for(lock, options_.watchdog, ready))
        throw UsageError("watchdog: rank " + std::to_string(self) + " timed out waiting for rank " +
                         std::to_string(from) + " (mismatched collective calls?)");
    } else {
      ch.cv.wait(lock, ready);
    }
    auto it = ch.arrived.find(ticket);
    if (it == ch.arrived.end()) {
      lock.unlock();
      check_alive();
      throw WorldAborted("world shut down");
    }
    Bytes out = std::move(it->second);
    ch.arrived.erase(it);
    lock.unlock();
    received_bytes_[static_cast<std::size_t>(self)] += out.size();
    received_messages_[static_cast<std::size_t>(self)] += 1;
    return out;
  }

  bool try_take(int self, int from, std::uint64_t ticket, Bytes& out) {
    auto& ch = channel(from, self);
    {
      std::lock_guard lock(ch.mu);
      auto it = ch.arrived.find(ticket);
      if (it == ch.arrived.end()) return false;
      out = std::move(it->second);
      ch.arrived.erase(it);
    }
    received_bytes_[static_cast<std::size_t>(self)] += out.size();
    received_messages_[static_cast<std::size_t>(self)] += 1;
    return true;
  }

  int size_;
  TransportOptions options_;
  std::vector<std::unique_ptr<detail::Channel>> channels_;
  // traces_[r] and the received counters of r are touched only by rank r.
  std::vector<std::vector<TraceRecord>> traces_;
  std::vector<std::uint64_t> sent_bytes_;
  std::vector<std::uint64_t> received_bytes_;
  std::vector<std::uint64_t> received_messages_;
  std::atomic<int> outstanding_{0};
  std::atomic<bool> aborted_{false};
  mutable std::mutex abort_mu_;
  std::string abort_reason_;
};

inline bool OpHandle::test() {
  if (!state_) throw UsageError("test on empty handle");
  auto& st = *state_;
  if (!st.completed && st.is_recv) st.completed = st.world->try_take(st.self, st.peer, st.ticket, st.data);
  if (st.completed && !st.settled) {
    st.settled = true;
    --st.world->outstanding_;
  }
  return st.completed;
}

inline Bytes OpHandle::wait() {
  if (!state_) throw UsageError("wait on empty handle");
  auto& st = *state_;
  if (st.waited) throw UsageError("wait called twice on the same handle");
  st.waited = true;
  if (!st.completed) {
    st.data = st.world->take(st.self, st.peer, st.ticket);
    st.completed = true;
  }
  if (!st.settled) {
    st.settled = true;
    --st.world->outstanding_;
  }
  return std::move(st.data);
}

// A rank's view of its World. Confined to that rank's thread.
class Endpoint {
 public:
  Endpoint(World& world, int rank) : world_(&world), rank_(rank) {
    if (rank < 0 || rank >= world.size()) throw TransportError("invalid rank");
  }

  int rank() const { return rank_; }
  int size() const { return world_->size(); }
  World& world() const { return *world_; }

  void send(int to, Bytes payload, std::string stage = {}, Volume volume = {}) {
    world_->send(rank_, to, std::move(payload), std::move(stage), volume);
  }
  Bytes recv(int from) { return world_->recv(rank_, from); }
  OpHandle isend(int to, Bytes payload, std::string stage = {}, Volume volume = {}) {
    return world_->isend(rank_, to, std::move(payload), std::move(stage), volume);
  }
  OpHandle irecv(int from) { return world_->irecv(rank_, from); }

 private:
  World* world_;
  int rank_;
};

inline Endpoint World::endpoint(int rank) { return Endpoint(*this, rank); }

// In-process backend: a send places the payload directly in the receiver's
// queue.
class SimulatedWorld final : public World {
 public:
  explicit SimulatedWorld(int size, TransportOptions options = {}) : World(size, options) {}
  const char* backend_name() const override { return "sim"; }

 protected:
  void transmit(int src, int dst, Bytes payload) override { deliver(src, dst, std::move(payload)); }
};

// Runs fn(Endpoint&) on one thread per rank and returns the per-rank results.
// If any rank throws, the world is aborted so blocked peers unwind, and the
// first root-cause exception (lowest rank, aborts excluded) is rethrown.
template <class Fn>
auto run_ranks(World& world, Fn&& fn) {
  using R = std::invoke_result_t<Fn&, Endpoint&>;
  const auto p = static_cast<std::size_t>(world.size());
  std::vector<std::exception_ptr> errors(p);
  std::vector<char> secondary(p, 0);
  using Slot = std::conditional_t<std::is_void_v<R>, char, std::optional<R>>;
  std::vector<Slot> results(p);

  auto body = [&](std::size_t r) {
    try {
      Endpoint ep(world, static_cast<int>(r));
      if constexpr (std::is_void_v<R>) {
        fn(ep);
      } else {
        results[r] = fn(ep);
      }
    } catch (const WorldAborted&) {
      errors[r] = std::current_exception();
      secondary[r] = 1;
    } catch (const std::exception& e) {
      errors[r] = std::current_exception();
      world.abort(e.what());
    } catch (...) {
      errors[r] = std::current_exception();
      world.abort("unknown exception");
    }
  };

  if (p == 1) {
    body(0);
  } else {
    std::vector<std::thread> threads;
    threads.reserve(p);
    for (std::size_t r = 0; r < p; ++r) threads.emplace_back(body, r);
    for (auto& t : threads) t.join();
  }

  for (std::size_t r = 0; r < p; ++r)
    if (errors[r] && !secondary[r]) std::rethrow_exception(errors[r]);
  for (std::size_t r = 0; r < p; ++r)
    if (errors[r]) std::rethrow_exception(errors[r]);

  if constexpr (!std::is_void_v<R>) {
    std::vector<R> out;
    out.reserve(p);
    for (auto& r : results) out.push_back(std::move(*r));
    return out;
  }
}

}  // namespace sparsecoll
