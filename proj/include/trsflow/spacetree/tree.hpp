#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <unordered_map>
#include <vector>

#include "trsflow/spacetree/geometry.hpp"
#include "trsflow/spacetree/uid.hpp"

namespace trsflow::spacetree {

/// Cells of l-grids intersecting `box` are subdivided until `depth`.
struct RefineRegion {
  Box box;
  int depth = 0;
  bool operator==(const RefineRegion&) const = default;
};

/// Logical grid (l-grid). Every l-grid carries a d-grid in this code; the flag
/// is kept for the registry contract.
struct LGrid {
  Uid uid;
  Box bbox;
  std::vector<Uid> children;  // empty, or exactly r_x*r_y*r_z entries
  bool has_dgrid = true;

  [[nodiscard]] bool is_leaf() const { return children.empty(); }
  bool operator==(const LGrid&) const = default;
};

class SpaceTree {
 public:
  explicit SpaceTree(GridGeometry geom);

  /// Builds a tree whose cells are refined to the maximum depth requested by
  /// any region they overlap (positive-volume overlap).
  static SpaceTree build(const GridGeometry& geom, std::span<const RefineRegion> regions);
  static SpaceTree uniform(const GridGeometry& geom, int depth);

  [[nodiscard]] const GridGeometry& geometry() const { return geom_; }
  [[nodiscard]] bool contains(Location loc) const { return nodes_.count(lebesgue_key(loc)) != 0; }
  [[nodiscard]] bool is_leaf(Location loc) const;
  [[nodiscard]] std::vector<Location> children(Location loc) const;

  /// All grids in depth-first Lebesgue order (root first).
  [[nodiscard]] std::vector<Location> grids() const;
  [[nodiscard]] std::vector<Location> leaves() const;
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] std::size_t leaf_count() const;
  [[nodiscard]] int deepest() const;

  /// Subdivides a leaf into its full set of children.
  void refine(Location leaf);
  /// Removes every descendant of `loc`, turning it into a leaf.
  void coarsen(Location loc);

 private:
  void refine_recursive(Location loc, std::span<const RefineRegion> regions);

  GridGeometry geom_;
  std::map<std::uint64_t, Location> nodes_;  // keyed by lebesgue_key
  std::unordered_map<Location, bool> refined_;
};

/// Contiguous chunk sizes for `count` items over `ranks` ranks; the first
/// `count % ranks` chunks hold one extra item.
[[nodiscard]] std::vector<std::size_t> partition_sizes(std::size_t count, int ranks);

/// Rank per item for an ordered item list (contiguous chunks along the order).
[[nodiscard]] std::vector<std::uint32_t> partition(std::size_t count, int ranks);

/// Assigns rank and rank-local sequence to every grid of `tree`, following
/// the Lebesgue order. Root ends up on rank 0 with local index 0.
[[nodiscard]] std::map<Location, Uid> assign_uids(const SpaceTree& tree, int ranks);

/// Builds the registry view (uid, bbox, child uids) of every grid.
[[nodiscard]] std::vector<LGrid> make_lgrids(const SpaceTree& tree, const std::map<Location, Uid>& uids);

}  // namespace trsflow::spacetree
