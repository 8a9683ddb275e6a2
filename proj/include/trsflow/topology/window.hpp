#pragma once

#include <cstdint>
#include <vector>

#include "trsflow/spacetree/geometry.hpp"
#include "trsflow/spacetree/uid.hpp"
#include "trsflow/topology/repo.hpp"

namespace trsflow::topology {

using spacetree::Index3;

struct WindowQuery {
  Box window;
  std::int64_t budget = 1;
  std::vector<int> fields{0, 1, 2, 3, 4};
};

/// Cells of one d-grid sampled by a window query: along each axis the cells
/// first, first+stride, ... (count of them), all with centres inside the window.
struct WindowEntry {
  Uid uid;
  Box bbox;
  int stride = 1;
  Index3 first{0, 0, 0};
  Index3 count{0, 0, 0};

  [[nodiscard]] std::int64_t points() const { return std::int64_t{count[0]} * count[1] * count[2]; }
  /// Interior linear indices (x fastest) of the sampled cells.
  [[nodiscard]] std::vector<std::int64_t> cells(const Index3& s) const;

  bool operator==(const WindowEntry&) const = default;
};

struct WindowSelection {
  std::vector<WindowEntry> entries;  // Lebesgue order
  int level = -1;                    // -1: nothing selected
  int stride = 0;
  std::int64_t point_count = 0;

  bool operator==(const WindowSelection&) const = default;
};

/// Read-only view of a grid tree. Implemented over the live registry and over
/// the rows of a checkpoint file so both paths share one selection routine.
class TreeAccess {
 public:
  virtual ~TreeAccess() = default;
  [[nodiscard]] virtual Uid root() const = 0;
  [[nodiscard]] virtual std::vector<Uid> children(Uid uid) const = 0;
  [[nodiscard]] virtual Box bbox(Uid uid) const = 0;
};

class RepoTreeAccess final : public TreeAccess {
 public:
  explicit RepoTreeAccess(const TopologyRepo& repo) : repo_(repo) {}
  [[nodiscard]] Uid root() const override { return repo_.root(); }
  [[nodiscard]] std::vector<Uid> children(Uid uid) const override { return repo_.grid(uid).children; }
  [[nodiscard]] Box bbox(Uid uid) const override { return repo_.grid(uid).bbox; }

 private:
  const TopologyRepo& repo_;
};

/// Level-of-detail selection: the candidate set at depth l holds the grids of
/// depth l plus shallower leaves touching the window. Picks the deepest level
/// for which some uniform stride in [1, max(s)] keeps the sampled point count
/// within the budget, then the smallest such stride.
[[nodiscard]] WindowSelection select_window(const TreeAccess& tree, const Index3& s, const WindowQuery& q);

}  // namespace trsflow::topology
