#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trsflow/solver/simulation.hpp"
#include "trsflow/topology/window.hpp"

namespace trsflow::steering {

/// Sampled data of one window query. values[e][f] holds, for entry e and the
/// f-th requested field, the entry's sampled cells (x fastest).
struct WindowData {
  std::int64_t step = 0;
  double t = 0.0;
  topology::WindowQuery query;
  topology::WindowSelection selection;
  std::vector<std::vector<std::vector<double>>> values;

  [[nodiscard]] std::int64_t point_count() const { return selection.point_count; }
};

/// Records one rank returns for the entries it owns (in the order given).
[[nodiscard]] std::vector<std::vector<std::vector<double>>> extract_entries(
    const solver::RankDomain& d, const std::vector<topology::WindowEntry>& entries, const std::vector<int>& fields);

/// Live window query over a simulation at a step boundary. The selection
/// comes from the topology server, entries are grouped by owning rank, every
/// rank extracts its decimated records, and the collector assembles them in
/// selection order.
class Collector {
 public:
  explicit Collector(solver::Simulation& sim) : sim_(sim) {}

  [[nodiscard]] WindowData query(const topology::WindowQuery& q) const;

 private:
  solver::Simulation& sim_;
};

}  // namespace trsflow::steering
