#include "trsflow/solver/boundary.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace trsflow::solver {

using spacetree::Field;
using spacetree::kNumFields;

bool Shape::covers(const Vec3& p, const Vec3& h, const Box& domain) const {
  switch (kind) {
    case ShapeKind::kBox:
      return box.contains(p);
    case ShapeKind::kCylinder: {
      double r2 = 0.0;
      for (int a = 0; a < 3; ++a) {
        if (a == axis) continue;
        r2 += (p[a] - center[a]) * (p[a] - center[a]);
      }
      return r2 <= radius * radius;
    }
    case ShapeKind::kFace: {
      const int a = face / 2;
      const double wall = face % 2 ? domain.hi[a] : domain.lo[a];
      return std::abs(p[a] - wall) < h[a];
    }
  }
  return false;
}

Shape Shape::translated(const Vec3& d) const {
  Shape s = *this;
  for (int a = 0; a < 3; ++a) {
    s.box.lo[a] += d[a];
    s.box.hi[a] += d[a];
    s.center[a] += d[a];
  }
  return s;
}

double InflowProfile::factor(const Vec3& p) const {
  if (!parabolic) return 1.0;
  const double w = hi - lo;
  const double y = std::clamp(p[axis], lo, hi);
  return 4.0 * (y - lo) * (hi - y) / (w * w);
}

BcParams BoundaryObject::params_at(const Vec3& p) const {
  BcParams out = params;
  const double f = profile.factor(p);
  for (auto& v : out.velocity) v *= f;
  return out;
}

Vec3 cell_size(const DGrid& g) {
  const auto& s = g.layout().s();
  return {g.bbox().extent(0) / s[0], g.bbox().extent(1) / s[1], g.bbox().extent(2) / s[2]};
}

Vec3 cell_center(const DGrid& g, int i, int j, int k) {
  const Vec3 h = cell_size(g);
  return {g.bbox().lo[0] + (i + 0.5) * h[0], g.bbox().lo[1] + (j + 0.5) * h[1], g.bbox().lo[2] + (k + 0.5) * h[2]};
}

bool stamp_cell_types(DGrid& g, const GridGeometry& geom, std::span<const BoundaryObject> objects) {
  const auto& L = g.layout();
  const auto& s = L.s();
  const Vec3 h = cell_size(g);
  bool changed = false;
  std::int64_t lin = 0;
  for (int k = 0; k < s[2]; ++k) {
    for (int j = 0; j < s[1]; ++j) {
      for (int i = 0; i < s[0]; ++i, ++lin) {
        const Vec3 c = cell_center(g, i, j, k);
        CellCode code = CellCode::kFluid;
        std::optional<BcParams> params;
        for (const auto& obj : objects) {
          if (!obj.shape.covers(c, h, geom.domain)) continue;
          code = obj.code;
          params = spacetree::needs_params(code) ? std::optional(obj.params_at(c)) : std::nullopt;
        }
        const auto p = L.idx(i, j, k);
        const CellCode old = g.code(p);
        if (old != code || g.params(lin) != params) changed = true;
        g.set_cell_type(lin, code, params);
        if (code == CellCode::kFluid && old != CellCode::kFluid) {
          for (int f = Field::kU; f <= Field::kP; ++f) g.current.at(f, p) = 0.0;
        }
      }
    }
  }
  g.compact_params();
  return changed;
}

void apply_boundary_values(const DGrid& g, FieldBuffer& buf, int dims) {
  const auto& L = g.layout();
  const auto& s = L.s();
  std::int64_t lin = 0;
  for (int k = 0; k < s[2]; ++k) {
    for (int j = 0; j < s[1]; ++j) {
      for (int i = 0; i < s[0]; ++i, ++lin) {
        const auto p = L.idx(i, j, k);
        const CellCode c = g.code(p);
        switch (c) {
          case CellCode::kFluid:
            break;
          case CellCode::kInflow: {
            const auto bc = g.params(lin).value_or(BcParams{});
            for (int a = 0; a < 3; ++a) buf.at(a, p) = bc.velocity[a];
            buf.at(Field::kP, p) = 0.0;
            buf.at(Field::kT, p) = bc.temperature;
            break;
          }
          case CellCode::kTempDirichlet: {
            const auto bc = g.params(lin).value_or(BcParams{});
            for (int a = 0; a < 3; ++a) buf.at(a, p) = 0.0;
            buf.at(Field::kP, p) = 0.0;
            buf.at(Field::kT, p) = bc.temperature;
            break;
          }
          case CellCode::kOutflow: {
            const int idx[3] = {i, j, k};
            for (int a = 0; a < dims; ++a) {
              bool done = false;
              for (int dir : {-1, 1}) {
                const int n = idx[a] + dir;
                if (n < 0 || n >= s[a]) continue;
                const auto q = p + dir * L.stride(a);
                if (g.code(q) != CellCode::kFluid) continue;
                for (int f = 0; f < kNumFields; ++f) buf.at(f, p) = buf.at(f, q);
                done = true;
                break;
              }
              if (done) break;
            }
            buf.at(Field::kP, p) = 0.0;
            break;
          }
          default:
            for (int a = 0; a < 3; ++a) buf.at(a, p) = 0.0;
            buf.at(Field::kP, p) = 0.0;
            break;
        }
      }
    }
  }
}

}  // namespace trsflow::solver
