#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "trsflow/solver/simulation.hpp"

namespace trsflow::steering {

using solver::BoundaryObject;
using solver::Simulation;
using spacetree::Box;
using spacetree::CellCode;
using spacetree::Vec3;

class CommandRejected : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class CommandKind {
  kSetBc,           // change code/velocity/temperature of object `target`
  kSetTemperature,  // temperature of a Dirichlet object, e.g. a lamp
  kMoveObstacle,    // translate object `target` by `offset`
  kAddObstacle,     // add `object`
  kRemoveObject,    // drop object `target`; its cells turn back into fluid
  kRefineRegion,    // leaves overlapping `region` are refined down to `depth`
  kCoarsenRegion,   // grids of `depth` inside `region` lose their subtrees
};

[[nodiscard]] const char* to_string(CommandKind k);
[[nodiscard]] CommandKind command_kind_from_string(const std::string& s);

struct SteeringCommand {
  CommandKind kind = CommandKind::kAddObstacle;
  std::string target;
  std::optional<BoundaryObject> object;
  std::optional<CellCode> code;
  std::optional<Vec3> velocity;
  std::optional<double> temperature;
  Vec3 offset{0, 0, 0};
  Box region{};
  int depth = 0;

  bool operator==(const SteeringCommand&) const = default;
};

/// Reason the command cannot be applied to the current state, or nullopt.
/// Looks at the objects and leaf cell types of every rank; call at a step
/// boundary.
[[nodiscard]] std::optional<std::string> validate(const SteeringCommand& cmd, const Simulation& sim);

/// Validates and applies at a step boundary: object edits restamp the cell
/// types, region commands rebuild the affected subtrees and reconnect.
/// Throws CommandRejected.
void apply(Simulation& sim, const SteeringCommand& cmd);

/// Subdivides every leaf overlapping `region` (positive volume) until it
/// reaches `depth`. Children stay on the parent's rank and start from the
/// parent's cell values. Returns the number of leaves added. Does not
/// reconnect.
std::size_t refine_region(Simulation& sim, const Box& region, int depth);

/// Every non-leaf grid of `depth` whose box lies inside `region` drops its
/// descendants. Returns the number of grids removed. Does not reconnect.
/// Throws CommandRejected when a rank would be left without grids.
std::size_t coarsen_region(Simulation& sim, const Box& region, int depth);

/// Leaf grid count over all ranks.
[[nodiscard]] std::size_t leaf_count(const Simulation& sim);

}  // namespace trsflow::steering
