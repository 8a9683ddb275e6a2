#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "trsflow/comm/communicator.hpp"
#include "trsflow/solver/boundary.hpp"
#include "trsflow/solver/exchange.hpp"
#include "trsflow/solver/params.hpp"
#include "trsflow/spacetree/tree.hpp"
#include "trsflow/topology/repo.hpp"

namespace trsflow::solver {

using spacetree::LGrid;
using spacetree::RefineRegion;

/// Initial field values at a cell centre: [u, v, w, p, T].
using InitialCondition = std::function<std::array<double, 5>(const Vec3&)>;

struct DomainSetup {
  GridGeometry geom;
  std::vector<RefineRegion> refine;  // empty: root grid only
  FluidProperties fluid;
  SolverParams params;
  std::vector<BoundaryObject> objects;
  Vec3 u0{0, 0, 0};
  std::optional<double> T0;  // defaults to fluid.T_inf
  InitialCondition init;     // overrides u0/T0 when set
};

/// Everything one compute rank owns: its d-grids (Lebesgue order) with the
/// matching l-grids, the exchange plan and the run constants.
class RankDomain {
 public:
  int rank = 0;
  int ranks = 1;
  GridGeometry geom;
  FluidProperties fluid;
  SolverParams params;
  std::vector<BoundaryObject> objects;
  std::int64_t step = 0;

  std::vector<DGrid> grids;
  std::vector<LGrid> lgrids;
  Exchanger ex;
  /// Global properties refreshed by connect()/restamp().
  int deepest = 0;
  bool has_outflow = false;
  /// Without outflow cells the pressure equation of one fluid leaf cell (the
  /// first in rank and Lebesgue order) is replaced by p = 0 there. Set on the
  /// owning rank only.
  /// Padded indices of the fluid interior cells of every local grid.
  std::vector<std::vector<std::int32_t>> fluid_index;
  int pin_grid = -1;
  std::ptrdiff_t pin_cell = -1;

  [[nodiscard]] double time() const { return static_cast<double>(step) * params.dt; }
  [[nodiscard]] int dims() const { return geom.dims(); }
  [[nodiscard]] bool is_leaf(std::size_t i) const { return lgrids[i].is_leaf(); }
  /// Local index of a grid, or -1.
  [[nodiscard]] int find(Uid uid) const;

  /// Collective. Registers the local grids with the topology server (rank 0
  /// clears it first) and builds the exchange plan. With `stamp` the cell
  /// types are recomputed from `objects` (restamp); without, the stored leaf
  /// types are kept and only propagated.
  void connect(Communicator& c, topology::TopologyServer& server, bool stamp = true);

  /// Collective. Recomputes leaf cell types from `objects`, propagates them
  /// to interior grids and halos, writes boundary values into current and
  /// restricts current to the interior grids.
  void restamp(Communicator& c);

 private:
  void propagate_codes(Communicator& c);
};

/// Builds rank `rank`'s share of a fresh domain (no communication). The
/// result still needs connect().
[[nodiscard]] RankDomain build_rank_domain(const DomainSetup& setup, int rank, int ranks);

/// The full tree of a setup; every rank derives the same one.
[[nodiscard]] spacetree::SpaceTree build_tree(const DomainSetup& setup);

}  // namespace trsflow::solver
