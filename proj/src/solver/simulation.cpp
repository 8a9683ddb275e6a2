#include "trsflow/solver/simulation.hpp"

namespace trsflow::solver {

Simulation::Simulation(const DomainSetup& setup, int ranks) {
  for (int r = 0; r < ranks; ++r) domains_.push_back(build_rank_domain(setup, r, ranks));
  server_ = std::make_unique<topology::TopologyServer>(setup.geom, ranks);
  reconnect(true);
}

Simulation::Simulation(const GridGeometry& geom, std::vector<RankDomain> domains, bool stamp)
    : domains_(std::move(domains)) {
  if (domains_.empty()) throw SolverError("simulation needs at least one rank");
  server_ = std::make_unique<topology::TopologyServer>(geom, ranks());
  reconnect(stamp);
}

void Simulation::spmd(const RankFn& fn) {
  comm::World world(ranks());
  world.run([&](Communicator& c) { fn(c, domains_[static_cast<std::size_t>(c.rank())]); });
}

std::vector<StepReport> Simulation::advance(int n, const std::function<void(const StepReport&)>& on_step) {
  std::vector<StepReport> reports;
  spmd([&](Communicator& c, RankDomain& d) {
    for (int i = 0; i < n; ++i) {
      const auto rep = time_step(c, d);
      if (c.rank() == 0) {
        reports.push_back(rep);
        if (on_step) on_step(rep);
      }
    }
  });
  return reports;
}

void Simulation::reconnect(bool stamp) {
  spmd([&](Communicator& c, RankDomain& d) { d.connect(c, *server_, stamp); });
}

}  // namespace trsflow::solver
