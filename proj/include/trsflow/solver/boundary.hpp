#pragma once

#include <span>
#include <string>
#include <vector>

#include "trsflow/spacetree/dgrid.hpp"
#include "trsflow/spacetree/geometry.hpp"

namespace trsflow::solver {

using spacetree::BcParams;
using spacetree::Box;
using spacetree::CellCode;
using spacetree::DGrid;
using spacetree::FieldBuffer;
using spacetree::GridGeometry;
using spacetree::Vec3;

enum class ShapeKind { kBox, kCylinder, kFace };

/// Region a boundary object stamps its cell type onto. Cells are matched by
/// their centre.
struct Shape {
  ShapeKind kind = ShapeKind::kBox;
  Box box{};             // kBox
  Vec3 center{0, 0, 0};  // kCylinder: axis through center along `axis`
  double radius = 0.0;
  int axis = 2;
  int face = 0;          // kFace: outermost cell layer on domain face 2*axis+(hi?1:0)

  [[nodiscard]] bool covers(const Vec3& p, const Vec3& h, const Box& domain) const;
  [[nodiscard]] Shape translated(const Vec3& d) const;

  bool operator==(const Shape&) const = default;
};

/// Optional spatial scaling of a boundary velocity: 4 (y-lo)(hi-y)/(hi-lo)^2
/// along `axis`, which peaks at 1 mid-way.
struct InflowProfile {
  bool parabolic = false;
  int axis = 1;
  double lo = 0.0;
  double hi = 1.0;

  [[nodiscard]] double factor(const Vec3& p) const;
  bool operator==(const InflowProfile&) const = default;
};

struct BoundaryObject {
  std::string id;
  Shape shape;
  CellCode code = CellCode::kObstacle;
  BcParams params{};
  InflowProfile profile{};

  [[nodiscard]] BcParams params_at(const Vec3& p) const;
  bool operator==(const BoundaryObject&) const = default;
};

[[nodiscard]] Vec3 cell_size(const DGrid& g);
[[nodiscard]] Vec3 cell_center(const DGrid& g, int i, int j, int k);

/// Recomputes the interior cell types of a leaf from the object list (later
/// objects win; uncovered cells are fluid). Cells turned into fluid get zero
/// velocity and pressure in `current`. Returns true if any code changed.
bool stamp_cell_types(DGrid& g, const GridGeometry& geom, std::span<const BoundaryObject> objects);

/// Writes boundary values into the non-fluid interior cells of `buf`:
/// inflow velocity/temperature, zero velocity in walls and obstacles, fixed
/// temperature in Dirichlet cells, and zero-gradient copies in outflow cells.
void apply_boundary_values(const DGrid& g, FieldBuffer& buf, int dims);

}  // namespace trsflow::solver
