#include "trsflow/steering/session.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "trsflow/steering/protocol.hpp"

namespace trsflow::steering {

namespace fs = std::filesystem;
using ckptio::CheckpointFile;

const char* to_string(Mode m) {
  switch (m) {
    case Mode::kRunning: return "running";
    case Mode::kPaused: return "paused";
    case Mode::kReloading: return "reloading";
  }
  return "?";
}

Session::Gate::Gate(const Session& s) : s_(s) {
  ++s_.waiting_;
  lock_ = std::unique_lock(s_.mutex_);
  --s_.waiting_;
}

Session::Gate::~Gate() {
  lock_.unlock();
  const_cast<Session&>(s_).cv_.notify_all();
}

namespace {

// Files are only held open while a snapshot is written: HDF5 flags a file
// opened for writing in its superblock, so an idle handle would make the file
// on disk differ from the closed one.
void collective(solver::Simulation& sim, const std::function<void(comm::Communicator&)>& fn) {
  sim.spmd([&](comm::Communicator& c, solver::RankDomain&) { fn(c); });
}

std::string absolute(const std::string& p) { return fs::absolute(p).lexically_normal().string(); }

SessionOptions normalized(SessionOptions o) {
  if (o.output.empty()) throw SessionError("session needs an output file");
  o.output = absolute(o.output);
  return o;
}

std::string branch_name(const std::string& parent) {
  const fs::path p(parent);
  for (int k = 1;; ++k) {
    auto cand = p.parent_path() / (p.stem().string() + ".b" + std::to_string(k) + p.extension().string());
    if (!fs::exists(cand)) return cand.string();
  }
}

}  // namespace

Session::Session(std::unique_ptr<solver::Simulation> sim, SessionOptions opt, std::string active, std::string root_file)
    : sim_(std::move(sim)), opt_(std::move(opt)), active_(std::move(active)) {
  files_.push_back(std::move(root_file));
  if (files_.front() != active_) files_.push_back(active_);
}

Session::Session(const solver::DomainSetup& setup, int ranks, SessionOptions opt)
    : Session(std::make_unique<solver::Simulation>(setup, ranks), normalized(opt), absolute(opt.output), absolute(opt.output)) {
  const ckptio::CommonParams common{setup.geom, setup.fluid, setup.params};
  collective(*sim_, [&](comm::Communicator& c) {
    CheckpointFile::create(opt_.output, common, c, {opt_.overwrite}).close();
  });
  if (opt_.write_initial) write_snapshot_locked();
}

std::unique_ptr<Session> Session::resume(const std::string& file_in, const std::string& label, int ranks,
                                         SessionOptions opt, bool branch) {
  const auto file = absolute(file_in);
  std::vector<std::string> labels;
  {
    const auto f = CheckpointFile::open_readonly(file);
    labels = f.list_timesteps();
  }
  if (std::find(labels.begin(), labels.end(), label) == labels.end()) {
    throw SessionError("no snapshot " + label + " in " + file);
  }
  const bool latest = label == labels.back();
  if (!latest && !branch) {
    throw SessionError("snapshot " + label + " is not the latest of " + file + "; resume it as a branch");
  }
  std::string target = file;
  if (branch) {
    target = opt.output.empty() || absolute(opt.output) == file ? branch_name(file) : absolute(opt.output);
    ckptio::open_branch(file, label, target, opt.overwrite);
  }
  auto sim = std::make_unique<solver::Simulation>(ckptio::load_simulation(target, label, ranks));
  opt.output = target;
  std::string root = file;
  // Walk up to the root of the tree this file belongs to.
  for (auto meta = CheckpointFile::open_readonly(root).branch_meta(); meta && fs::exists(meta->parent_path);
       meta = CheckpointFile::open_readonly(root).branch_meta()) {
    root = meta->parent_path;
  }
  auto s = std::unique_ptr<Session>(new Session(std::move(sim), opt, target, root));
  if (branch && root != file) s->files_.insert(s->files_.begin() + 1, file);
  return s;
}

Session::~Session() { stop(); }

bool Session::due(double t) const {
  const double dt = sim_->domain(0).params.dt;
  if (opt_.snapshot_interval <= 0.0) return std::abs(t - opt_.end_time) < 0.5 * dt;
  const double k = std::round(t / opt_.snapshot_interval);
  return k >= 1.0 && std::abs(t - k * opt_.snapshot_interval) < 0.5 * dt;
}

bool Session::finished() const { return sim_->time() >= opt_.end_time - 0.5 * sim_->domain(0).params.dt; }

void Session::write_snapshot_locked() {
  const auto label = solver::time_label(sim_->time());
  ckptio::WriteStats stats;
  try {
    sim_->spmd([&](comm::Communicator& c, solver::RankDomain& d) {
      auto f = CheckpointFile::open(active_, c);
      const auto ws = ckptio::write_snapshot(f, d, c, {opt_.aggregators});
      if (c.rank() == 0) stats = ws;
    });
  } catch (...) {
    // A failed collective write must not leave a half-written snapshot behind.
    try {
      comm::World(1).run([&](comm::Communicator& c) {
        auto f = CheckpointFile::open(active_, c);
        if (const auto l = f.list_timesteps(); std::find(l.begin(), l.end(), label) != l.end()) {
          ckptio::remove_snapshot(f, label);
        }
      });
    } catch (...) {
    }
    throw;
  }
  snapshots_.push_back({active_, label, stats});
}

void Session::apply_queued(std::vector<nlohmann::json>& events) {
  while (!queue_.empty()) {
    auto [id, cmd] = std::move(queue_.front());
    queue_.pop_front();
    nlohmann::json ev{{"type", "command_status"}, {"command_id", id}, {"kind", to_string(cmd.kind)}};
    try {
      apply(*sim_, cmd);
      ev["status"] = "applied";
      ev["step"] = sim_->step();
    } catch (const std::exception& e) {
      ev["status"] = "rejected";
      ev["reason"] = e.what();
    }
    events.push_back(std::move(ev));
  }
}

std::optional<solver::StepReport> Session::step() { return step_impl(false); }

std::optional<solver::StepReport> Session::step_impl(bool only_running) {
  std::vector<nlohmann::json> events;
  std::optional<solver::StepReport> rep;
  {
    Gate g(*this);
    if (finished() || (only_running && mode_ != Mode::kRunning)) return std::nullopt;
    apply_queued(events);
    rep = sim_->advance(1).front();
    std::optional<std::string> written;
    if (due(sim_->time())) {
      write_snapshot_locked();
      written = snapshots_.back().label;
    }
    nlohmann::json ev{{"type", "event"}, {"step", rep->step}, {"t", rep->t}, {"cfl", rep->cfl},
                      {"file", active_}};
    if (written) ev["snapshot"] = *written;
    events.push_back(std::move(ev));
  }
  publish(events);
  return rep;
}

void Session::run_to_end(const std::atomic<bool>* stop) {
  while (!(stop && stop->load())) {
    if (!step()) break;
  }
}

void Session::publish(const std::vector<nlohmann::json>& events) {
  std::lock_guard lock(listeners_mutex_);
  for (const auto& ev : events) {
    for (auto& [id, l] : listeners_) l(ev);
  }
}

void Session::loop() {
  for (;;) {
    {
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [&] { return stop_ || (mode_ == Mode::kRunning && waiting_ == 0); });
      if (stop_) return;
      if (finished()) {
        mode_ = Mode::kPaused;
        lock.unlock();
        publish({{{"type", "state"}, {"mode", to_string(Mode::kPaused)}, {"reason", "end_time"}}});
        continue;
      }
    }
    try {
      step_impl(true);
    } catch (const std::exception& e) {
      {
        std::lock_guard lock(mutex_);
        mode_ = Mode::kPaused;
      }
      publish({{{"type", "error"}, {"message", std::string("step failed: ") + e.what()}}});
    }
  }
}

void Session::start() {
  std::lock_guard lock(mutex_);
  if (thread_.joinable()) return;
  stop_ = false;
  thread_ = std::thread([this] { loop(); });
}

void Session::stop() {
  {
    std::lock_guard lock(mutex_);
    stop_ = true;
  }
  cv_.notify_all();
  if (thread_.joinable()) thread_.join();
}

void Session::pause() {
  {
    Gate g(*this);
    mode_ = Mode::kPaused;
  }
  publish({{{"type", "state"}, {"mode", to_string(Mode::kPaused)}}});
}

void Session::resume() {
  {
    Gate g(*this);
    mode_ = Mode::kRunning;
  }
  publish({{{"type", "state"}, {"mode", to_string(Mode::kRunning)}}});
}

Mode Session::mode() const {
  Gate g(*this);
  return mode_;
}

void Session::set_end_time(double t) {
  Gate g(*this);
  opt_.end_time = t;
}

std::uint64_t Session::submit(const SteeringCommand& cmd) {
  std::uint64_t id = 0;
  {
    Gate g(*this);
    if (const auto why = validate(cmd, *sim_)) throw CommandRejected(*why);
    id = next_command_++;
    queue_.emplace_back(id, cmd);
  }
  publish({{{"type", "command_status"}, {"command_id", id}, {"kind", to_string(cmd.kind)}, {"status", "queued"}}});
  return id;
}

WindowData Session::window(const topology::WindowQuery& q) {
  Gate g(*this);
  return Collector(*sim_).query(q);
}

ckptio::OfflineSelection Session::window_at(const std::string& file, const std::string& label,
                                            const topology::WindowQuery& q) const {
  Gate g(*this);
  const auto path = file.empty() ? active_ : absolute(file);
  if (std::find(files_.begin(), files_.end(), path) == files_.end()) {
    throw SessionError("file " + file + " is not part of this session");
  }
  return ckptio::offline_select_window(CheckpointFile::open_readonly(path), label, q);
}

std::vector<std::string> Session::timesteps(const std::string& file) const {
  Gate g(*this);
  if (file.empty()) return CheckpointFile::open_readonly(active_).list_timesteps();
  if (std::find(files_.begin(), files_.end(), absolute(file)) == files_.end()) {
    throw SessionError("file " + file + " is not part of this session");
  }
  return CheckpointFile::open_readonly(absolute(file)).list_timesteps();
}

std::vector<BranchNode> Session::branches() const {
  Gate g(*this);
  std::vector<BranchNode> out;
  for (const auto& f : files_) {
    const auto h = CheckpointFile::open_readonly(f);
    BranchNode n;
    n.file = f;
    if (const auto meta = h.branch_meta()) {
      n.parent = meta->parent_path;
      n.branch_time = meta->branch_time;
    }
    n.labels = h.list_timesteps();
    n.active = f == active_;
    out.push_back(std::move(n));
  }
  return out;
}

std::string Session::active_file() const {
  Gate g(*this);
  return active_;
}

std::string Session::reload(const std::string& file, const std::string& label,
                            const std::vector<SteeringCommand>& commands, const std::string& branch_path) {
  std::string target;
  {
    Gate g(*this);
    const auto parent = file.empty() ? active_ : absolute(file);
    if (std::find(files_.begin(), files_.end(), parent) == files_.end()) {
      throw SessionError("file " + parent + " is not part of this session");
    }
    const Mode before = mode_;
    mode_ = Mode::kReloading;
    try {
      const int ranks = sim_->ranks();
      auto next = std::make_unique<solver::Simulation>(ckptio::load_simulation(parent, label, ranks));
      for (const auto& c : commands) {
        if (const auto why = validate(c, *next)) throw CommandRejected(*why);
      }
      target = branch_path.empty() ? branch_name(parent) : absolute(branch_path);
      ckptio::open_branch(parent, label, target);
      active_ = target;
      sim_ = std::move(next);
      files_.push_back(target);
      queue_.clear();
      for (const auto& c : commands) queue_.emplace_back(next_command_++, c);
    } catch (...) {
      mode_ = before;
      throw;
    }
    mode_ = Mode::kPaused;
  }
  publish({{{"type", "reloaded"}, {"file", target}, {"t", label}}});
  return target;
}

int Session::subscribe(Listener l) {
  std::lock_guard lock(listeners_mutex_);
  listeners_[next_listener_] = std::move(l);
  return next_listener_++;
}

void Session::unsubscribe(int id) {
  std::lock_guard lock(listeners_mutex_);
  listeners_.erase(id);
}

std::vector<SnapshotRecord> Session::snapshots() const {
  Gate g(*this);
  return snapshots_;
}

std::int64_t Session::step_count() const {
  Gate g(*this);
  return sim_->step();
}

double Session::time() const {
  Gate g(*this);
  return sim_->time();
}

}  // namespace trsflow::steering
