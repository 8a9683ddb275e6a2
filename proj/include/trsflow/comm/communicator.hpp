#pragma once

#include <any>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

namespace trsflow::comm {

class CommError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised on every rank still waiting when another rank failed.
class CommAborted : public CommError {
 public:
  using CommError::CommError;
};

class CommTimeout : public CommError {
 public:
  using CommError::CommError;
};

struct Message {
  int src = -1;
  std::uint64_t tag = 0;
  std::any payload;
};

namespace detail {

struct Mailbox {
  std::mutex mutex;
  std::condition_variable cv;
  std::deque<Message> queue;
};

struct WorldState {
  explicit WorldState(int n, std::chrono::milliseconds timeout);

  int size;
  std::chrono::milliseconds recv_timeout;

  std::mutex mutex;
  std::condition_variable cv;
  std::uint64_t generation = 0;
  int arrived = 0;
  bool aborted = false;
  std::vector<std::any> slots;
  std::vector<std::unique_ptr<Mailbox>> mailboxes;

  void abort();
};

}  // namespace detail

/// Handle of one rank inside a World. Collectives must be entered by every
/// rank in the same order; reductions combine values in rank order so results
/// do not depend on thread scheduling.
class Communicator {
 public:
  Communicator(std::shared_ptr<detail::WorldState> state, int rank) : state_(std::move(state)), rank_(rank) {}

  [[nodiscard]] int rank() const { return rank_; }
  [[nodiscard]] int size() const { return state_->size; }

  void barrier();

  template <class T>
  std::vector<T> allgather(const T& value) {
    auto all = exchange(std::any(value));
    std::vector<T> out;
    out.reserve(all.size());
    for (auto& a : all) out.push_back(std::any_cast<T>(std::move(a)));
    return out;
  }

  template <class T>
  T broadcast(const T& value, int root) {
    auto all = exchange(rank_ == root ? std::any(value) : std::any());
    return std::any_cast<T>(std::move(all[static_cast<std::size_t>(root)]));
  }

  double allreduce_sum(double v);
  std::int64_t allreduce_sum(std::int64_t v);
  double allreduce_max(double v);
  bool allreduce_or(bool v);
  /// Sum over lower ranks (0 on rank 0).
  std::int64_t exscan_sum(std::int64_t v);

  void send(int dst, std::uint64_t tag, std::any payload);
  /// Receives the oldest message carrying `tag` from any source.
  Message recv(std::uint64_t tag);
  Message recv(int src, std::uint64_t tag);

 private:
  std::vector<std::any> exchange(std::any mine);
  Message recv_matching(const std::function<bool(const Message&)>& match, const std::string& what);

  std::shared_ptr<detail::WorldState> state_;
  int rank_;
};

/// A fixed set of in-process ranks. `run` executes an SPMD function once per
/// rank on its own thread (inline for a single rank) and rethrows the first
/// failure after all ranks have stopped.
class World {
 public:
  explicit World(int size, std::chrono::milliseconds recv_timeout = std::chrono::seconds(120));

  [[nodiscard]] int size() const { return size_; }

  void run(const std::function<void(Communicator&)>& body);

 private:
  int size_;
  std::chrono::milliseconds timeout_;
};

}  // namespace trsflow::comm
