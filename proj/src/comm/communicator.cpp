#include "trsflow/comm/communicator.hpp"

#include <algorithm>
#include <thread>

namespace trsflow::comm {

namespace detail {

WorldState::WorldState(int n, std::chrono::milliseconds timeout)
    : size(n), recv_timeout(timeout), slots(static_cast<std::size_t>(n)) {
  for (int i = 0; i < n; ++i) mailboxes.push_back(std::make_unique<Mailbox>());
}

void WorldState::abort() {
  {
    std::lock_guard lock(mutex);
    aborted = true;
  }
  cv.notify_all();
  for (auto& mb : mailboxes) {
    std::lock_guard lock(mb->mutex);
    mb->cv.notify_all();
  }
}

}  // namespace detail

void Communicator::barrier() {
  std::unique_lock lock(state_->mutex);
  if (state_->aborted) throw CommAborted("world aborted");
  const auto gen = state_->generation;
  if (++state_->arrived == state_->size) {
    state_->arrived = 0;
    ++state_->generation;
    state_->cv.notify_all();
    return;
  }
  state_->cv.wait(lock, [&] { return state_->generation != gen || state_->aborted; });
  if (state_->generation == gen) throw CommAborted("world aborted during barrier");
}

std::vector<std::any> Communicator::exchange(std::any mine) {
  {
    std::lock_guard lock(state_->mutex);
    state_->slots[static_cast<std::size_t>(rank_)] = std::move(mine);
  }
  barrier();
  std::vector<std::any> out;
  {
    std::lock_guard lock(state_->mutex);
    out = state_->slots;
  }
  barrier();
  return out;
}

double Communicator::allreduce_sum(double v) {
  double s = 0.0;
  for (double x : allgather(v)) s += x;
  return s;
}

std::int64_t Communicator::allreduce_sum(std::int64_t v) {
  std::int64_t s = 0;
  for (auto x : allgather(v)) s += x;
  return s;
}

double Communicator::allreduce_max(double v) {
  const auto all = allgather(v);
  return *std::max_element(all.begin(), all.end());
}

bool Communicator::allreduce_or(bool v) {
  const auto all = allgather(v);
  return std::any_of(all.begin(), all.end(), [](bool b) { return b; });
}

std::int64_t Communicator::exscan_sum(std::int64_t v) {
  const auto all = allgather(v);
  std::int64_t s = 0;
  for (int r = 0; r < rank_; ++r) s += all[static_cast<std::size_t>(r)];
  return s;
}

void Communicator::send(int dst, std::uint64_t tag, std::any payload) {
  if (dst < 0 || dst >= size()) throw CommError("send to invalid rank " + std::to_string(dst));
  auto& mb = *state_->mailboxes[static_cast<std::size_t>(dst)];
  {
    std::lock_guard lock(mb.mutex);
    mb.queue.push_back(Message{rank_, tag, std::move(payload)});
  }
  mb.cv.notify_all();
}

Message Communicator::recv(std::uint64_t tag) {
  return recv_matching([tag](const Message& m) { return m.tag == tag; }, "tag " + std::to_string(tag));
}

Message Communicator::recv(int src, std::uint64_t tag) {
  return recv_matching([src, tag](const Message& m) { return m.tag == tag && m.src == src; },
                       "tag " + std::to_string(tag) + " from rank " + std::to_string(src));
}

Message Communicator::recv_matching(const std::function<bool(const Message&)>& match, const std::string& what) {
  auto& mb = *state_->mailboxes[static_cast<std::size_t>(rank_)];
  std::unique_lock lock(mb.mutex);
  const auto deadline = std::chrono::steady_clock::now() + state_->recv_timeout;
  for (;;) {
    const auto it = std::find_if(mb.queue.begin(), mb.queue.end(), match);
    if (it != mb.queue.end()) {
      Message m = std::move(*it);
      mb.queue.erase(it);
      return m;
    }
    {
      std::lock_guard world_lock(state_->mutex);
      if (state_->aborted) throw CommAborted("world aborted while waiting for " + what);
    }
    if (mb.cv.wait_until(lock, deadline) == std::cv_status::timeout) {
      const auto again = std::find_if(mb.queue.begin(), mb.queue.end(), match);
      if (again != mb.queue.end()) continue;
      throw CommTimeout("rank " + std::to_string(rank_) + ": no reply for " + what);
    }
  }
}

World::World(int size, std::chrono::milliseconds recv_timeout) : size_(size), timeout_(recv_timeout) {
  if (size < 1) throw CommError("world size must be >= 1");
}

void World::run(const std::function<void(Communicator&)>& body) {
  auto state = std::make_shared<detail::WorldState>(size_, timeout_);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(size_));
  auto rank_main = [&](int r) {
    Communicator c(state, r);
    try {
      body(c);
    } catch (...) {
      errors[static_cast<std::size_t>(r)] = std::current_exception();
      state->abort();
    }
  };
  if (size_ == 1) {
    rank_main(0);
  } else {
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(size_));
    for (int r = 0; r < size_; ++r) threads.emplace_back(rank_main, r);
    for (auto& t : threads) t.join();
  }
  // Prefer the root cause over the secondary aborts it triggered elsewhere.
  std::exception_ptr first;
  for (const auto& e : errors) {
    if (!e) continue;
    try {
      std::rethrow_exception(e);
    } catch (const CommAborted&) {
      if (!first) first = e;
    } catch (...) {
      std::rethrow_exception(e);
    }
  }
  if (first) std::rethrow_exception(first);
}

}  // namespace trsflow::comm
