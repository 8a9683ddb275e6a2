#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "trsflow/solver/stepper.hpp"

namespace trsflow::solver {

/// A set of in-process compute ranks with their domains and the shared
/// topology server. Collective work is dispatched with spmd().
class Simulation {
 public:
  using RankFn = std::function<void(Communicator&, RankDomain&)>;

  /// Fresh run: builds the tree, distributes it over `ranks` and connects.
  Simulation(const DomainSetup& setup, int ranks);
  /// Adopts already materialized rank domains (restart). Cell types are
  /// taken as stored unless `stamp` is set.
  Simulation(const GridGeometry& geom, std::vector<RankDomain> domains, bool stamp = false);

  [[nodiscard]] int ranks() const { return static_cast<int>(domains_.size()); }
  [[nodiscard]] RankDomain& domain(int r) { return domains_[static_cast<std::size_t>(r)]; }
  [[nodiscard]] const RankDomain& domain(int r) const { return domains_[static_cast<std::size_t>(r)]; }
  [[nodiscard]] std::vector<RankDomain>& domains() { return domains_; }
  [[nodiscard]] topology::TopologyServer& topology() { return *server_; }
  [[nodiscard]] std::int64_t step() const { return domains_.front().step; }
  [[nodiscard]] double time() const { return domains_.front().time(); }
  [[nodiscard]] const GridGeometry& geometry() const { return domains_.front().geom; }

  /// Runs fn once per rank, concurrently, and rethrows the first failure.
  void spmd(const RankFn& fn);

  /// Advances n steps. on_step runs on rank 0's thread after every step.
  std::vector<StepReport> advance(int n, const std::function<void(const StepReport&)>& on_step = {});

  /// Re-registers topology and rebuilds plans after the grid set changed.
  void reconnect(bool stamp);

 private:
  std::vector<RankDomain> domains_;
  std::unique_ptr<topology::TopologyServer> server_;
};

}  // namespace trsflow::solver
