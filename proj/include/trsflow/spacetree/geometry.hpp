#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "trsflow/spacetree/uid.hpp"

namespace trsflow::spacetree {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Vec3 = std::array<double, 3>;
using Index3 = std::array<int, 3>;

/// Axis-aligned box in metres.
struct Box {
  Vec3 lo{0, 0, 0};
  Vec3 hi{0, 0, 0};

  [[nodiscard]] double extent(int axis) const { return hi[axis] - lo[axis]; }
  [[nodiscard]] double volume() const { return extent(0) * extent(1) * extent(2); }
  [[nodiscard]] Vec3 center() const {
    return {0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])};
  }
  /// True when the two boxes share a region of positive volume on every
  /// axis where this box has positive extent.
  [[nodiscard]] bool overlaps(const Box& o) const;
  /// Closed-box intersection (touching counts).
  [[nodiscard]] bool touches(const Box& o) const;
  [[nodiscard]] bool contains(const Vec3& p) const;
  [[nodiscard]] bool contains(const Box& o) const;

  bool operator==(const Box&) const = default;
};

/// Static description of the hierarchical grid: refinement factors per level,
/// cells per d-grid, maximum depth and the root extent.
struct GridGeometry {
  Index3 r{2, 2, 1};
  Index3 s{16, 16, 1};
  int max_depth = 0;
  Box domain{};

  /// 2 when the third axis is degenerate (r_z == s_z == 1), else 3.
  [[nodiscard]] int dims() const { return (r[2] == 1 && s[2] == 1) ? 2 : 3; }
  [[nodiscard]] int children_per_grid() const { return r[0] * r[1] * r[2]; }
  [[nodiscard]] std::int64_t cells_per_grid() const {
    return std::int64_t{s[0]} * s[1] * s[2];
  }

  /// Throws ConfigError on an unusable geometry.
  void validate() const;

  /// Number of grids per axis at the given depth (r^depth).
  [[nodiscard]] std::array<std::int64_t, 3> grids_per_axis(int depth) const;
  [[nodiscard]] Vec3 cell_size(int depth) const;

  /// Integer position of a grid within its level.
  [[nodiscard]] std::array<std::int64_t, 3> coords(Location loc) const;
  /// Location of the grid at `depth` with integer position `c`; does not
  /// check that the position is inside the domain.
  [[nodiscard]] Location location_at(int depth, const std::array<std::int64_t, 3>& c) const;

  [[nodiscard]] Box bbox(Location loc) const;
  [[nodiscard]] Index3 child_offset(int child_index) const {
    return {child_index % r[0], (child_index / r[0]) % r[1], child_index / (r[0] * r[1])};
  }
  [[nodiscard]] int child_index(const Index3& off) const {
    return off[0] + r[0] * (off[1] + r[1] * off[2]);
  }

  bool operator==(const GridGeometry&) const = default;
};

}  // namespace trsflow::spacetree
