#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "trsflow/ckptio/checkpoint.hpp"
#include "trsflow/steering/collector.hpp"
#include "trsflow/steering/command.hpp"

namespace trsflow::steering {

class SessionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Mode { kRunning, kPaused, kReloading };
[[nodiscard]] const char* to_string(Mode m);

struct SessionOptions {
  /// Checkpoint file of the root run.
  std::string output;
  /// Snapshots at every multiple of the interval (t > 0); 0 writes only at end_time.
  double snapshot_interval = 0.0;
  double end_time = 0.0;
  int aggregators = 0;
  bool overwrite = false;
  /// Also store the state the run starts from.
  bool write_initial = false;
};

struct SnapshotRecord {
  std::string file;
  std::string label;
  ckptio::WriteStats stats;  // rank 0's record
};

/// One checkpoint file in the branch tree; parent is empty for the root.
struct BranchNode {
  std::string file;
  std::string parent;
  double branch_time = 0.0;
  std::vector<std::string> labels;
  bool active = false;
};

/// A steerable run: owns the simulation, the active checkpoint file and the
/// tree of branch files. All members are thread-safe; stepping, commands and
/// queries are serialized so that every observation happens at a step
/// boundary.
class Session {
 public:
  using Listener = std::function<void(const nlohmann::json&)>;

  /// Fresh run writing into opt.output (created).
  Session(const solver::DomainSetup& setup, int ranks, SessionOptions opt);
  /// Continues snapshot `label` of `file`. Appends to `file` when the label is
  /// its latest snapshot; otherwise `branch` must be set and a branch file is
  /// created next to it.
  static std::unique_ptr<Session> resume(const std::string& file, const std::string& label, int ranks,
                                         SessionOptions opt, bool branch);
  ~Session();

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  /// Applies queued commands, advances one step and writes a snapshot when
  /// one is due. Returns nullopt once end_time is reached.
  std::optional<solver::StepReport> step();
  /// Steps until end_time or until *stop becomes true.
  void run_to_end(const std::atomic<bool>* stop = nullptr);
  [[nodiscard]] bool finished() const;

  /// Background stepping thread (used by the gateway). It steps while the
  /// mode is RUNNING and pauses itself at end_time.
  void start();
  void stop();
  void pause();
  void resume();
  [[nodiscard]] Mode mode() const;
  /// Sets a new end time (e.g. to continue a finished run).
  void set_end_time(double t);

  /// Validates against the current state and queues for the next step
  /// boundary. Returns the command id; throws CommandRejected.
  std::uint64_t submit(const SteeringCommand& cmd);

  [[nodiscard]] WindowData window(const topology::WindowQuery& q);
  [[nodiscard]] ckptio::OfflineSelection window_at(const std::string& file, const std::string& label,
                                                   const topology::WindowQuery& q) const;

  /// Labels of `file` (default: the active file).
  [[nodiscard]] std::vector<std::string> timesteps(const std::string& file = "") const;
  /// Every file of this session's tree, edges taken from the branch metadata.
  [[nodiscard]] std::vector<BranchNode> branches() const;
  [[nodiscard]] std::string active_file() const;

  /// Time Reversible Steering: pauses, seeds a branch file from snapshot
  /// `label` of `file`, loads it, queues `commands` and makes the branch the
  /// active run. Returns the branch path. The session stays paused.
  std::string reload(const std::string& file, const std::string& label, const std::vector<SteeringCommand>& commands,
                     const std::string& branch_path = "");

  /// Listener receives step events and command status events.
  int subscribe(Listener l);
  void unsubscribe(int id);

  [[nodiscard]] std::vector<SnapshotRecord> snapshots() const;
  [[nodiscard]] std::int64_t step_count() const;
  [[nodiscard]] double time() const;

  /// Runs fn(Simulation&) under the session lock.
  template <class F>
  decltype(auto) with_simulation(F&& fn) {
    Gate g(*this);
    return fn(*sim_);
  }

 private:
  Session(std::unique_ptr<solver::Simulation> sim, SessionOptions opt, std::string active, std::string root_file);

  // Lock taken by everything except the stepping thread's wait.
  class Gate {
   public:
    explicit Gate(const Session& s);
    ~Gate();
    Gate(const Gate&) = delete;
    Gate& operator=(const Gate&) = delete;

   private:
    const Session& s_;
    std::unique_lock<std::mutex> lock_;
  };

  std::optional<solver::StepReport> step_impl(bool only_running);
  void apply_queued(std::vector<nlohmann::json>& events);
  void write_snapshot_locked();
  [[nodiscard]] bool due(double t) const;
  void publish(const std::vector<nlohmann::json>& events);
  void loop();

  std::unique_ptr<solver::Simulation> sim_;
  SessionOptions opt_;
  std::string active_;  // file receiving snapshots
  std::vector<std::string> files_;  // tree nodes, root first
  std::vector<SnapshotRecord> snapshots_;
  std::deque<std::pair<std::uint64_t, SteeringCommand>> queue_;
  std::uint64_t next_command_ = 1;

  mutable std::mutex mutex_;
  mutable std::atomic<int> waiting_{0};
  std::condition_variable cv_;
  Mode mode_ = Mode::kPaused;
  bool stop_ = false;
  std::thread thread_;

  std::mutex listeners_mutex_;
  std::map<int, Listener> listeners_;
  int next_listener_ = 1;
};

}  // namespace trsflow::steering
