#include "trsflow/spacetree/geometry.hpp"

#include <cmath>

namespace trsflow::spacetree {

bool Box::overlaps(const Box& o) const {
  for (int a = 0; a < 3; ++a) {
    if (extent(a) > 0.0 && o.extent(a) > 0.0) {
      if (!(lo[a] < o.hi[a] && o.lo[a] < hi[a])) return false;
    } else if (!(lo[a] <= o.hi[a] && o.lo[a] <= hi[a])) {
      return false;
    }
  }
  return true;
}

bool Box::touches(const Box& o) const {
  for (int a = 0; a < 3; ++a) {
    if (!(lo[a] <= o.hi[a] && o.lo[a] <= hi[a])) return false;
  }
  return true;
}

bool Box::contains(const Vec3& p) const {
  for (int a = 0; a < 3; ++a) {
    if (p[a] < lo[a] || p[a] > hi[a]) return false;
  }
  return true;
}

bool Box::contains(const Box& o) const {
  for (int a = 0; a < 3; ++a) {
    if (o.lo[a] < lo[a] || o.hi[a] > hi[a]) return false;
  }
  return true;
}

void GridGeometry::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (!(domain.extent(a) > 0.0) || !std::isfinite(domain.extent(a))) {
      throw ConfigError("domain box has zero or invalid extent on axis " + std::to_string(a));
    }
    if (r[a] < 1) throw ConfigError("refinement factor must be >= 1");
    if (s[a] < 1) throw ConfigError("cells per grid must be >= 1");
    if (r[a] > 1 && s[a] % r[a] != 0) {
      throw ConfigError("cells per grid on axis " + std::to_string(a) +
                        " must be divisible by the refinement factor");
    }
  }
  if (children_per_grid() < 2) throw ConfigError("at least one axis must be refined");
  if (children_per_grid() > static_cast<int>(kMaxDigit) + 1) {
    throw ConfigError("r_x*r_y*r_z must not exceed 8 (3-bit path digits)");
  }
  if (max_depth < 0 || max_depth > kMaxDepth) {
    throw ConfigError("max_depth must lie in [0, " + std::to_string(kMaxDepth) + "]");
  }
}

std::array<std::int64_t, 3> GridGeometry::grids_per_axis(int depth) const {
  std::array<std::int64_t, 3> n{1, 1, 1};
  for (int a = 0; a < 3; ++a) {
    for (int d = 0; d < depth; ++d) n[a] *= r[a];
  }
  return n;
}

Vec3 GridGeometry::cell_size(int depth) const {
  const auto n = grids_per_axis(depth);
  Vec3 h{};
  for (int a = 0; a < 3; ++a) {
    h[a] = domain.extent(a) / (static_cast<double>(n[a]) * s[a]);
  }
  return h;
}

std::array<std::int64_t, 3> GridGeometry::coords(Location loc) const {
  std::array<std::int64_t, 3> c{0, 0, 0};
  for (int l = 1; l <= loc.depth(); ++l) {
    const Index3 off = child_offset(loc.digit(l));
    for (int a = 0; a < 3; ++a) c[a] = c[a] * r[a] + off[a];
  }
  return c;
}

Location GridGeometry::location_at(int depth, const std::array<std::int64_t, 3>& c) const {
  std::vector<std::uint8_t> path(static_cast<std::size_t>(depth));
  std::array<std::int64_t, 3> rem = c;
  for (int l = depth; l >= 1; --l) {
    Index3 off{};
    for (int a = 0; a < 3; ++a) {
      off[a] = static_cast<int>(rem[a] % r[a]);
      rem[a] /= r[a];
    }
    path[static_cast<std::size_t>(l - 1)] = static_cast<std::uint8_t>(child_index(off));
  }
  return Location::from_path(path);
}

Box GridGeometry::bbox(Location loc) const {
  const auto n = grids_per_axis(loc.depth());
  const auto c = coords(loc);
  Box b;
  for (int a = 0; a < 3; ++a) {
    // Ratios of exact integers: the shared face of two siblings (or of a child
    // and its parent) evaluates to the bit-identical coordinate.
    const double f0 = static_cast<double>(c[a]) / static_cast<double>(n[a]);
    const double f1 = static_cast<double>(c[a] + 1) / static_cast<double>(n[a]);
    b.lo[a] = c[a] == 0 ? domain.lo[a] : domain.lo[a] + domain.extent(a) * f0;
    b.hi[a] = c[a] + 1 == n[a] ? domain.hi[a] : domain.lo[a] + domain.extent(a) * f1;
  }
  return b;
}

}  // namespace trsflow::spacetree
