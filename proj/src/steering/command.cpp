#include "trsflow/steering/command.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace trsflow::steering {

using spacetree::DGrid;
using spacetree::Location;
using spacetree::Uid;

namespace {

constexpr std::pair<CommandKind, const char*> kNames[] = {
    {CommandKind::kSetBc, "set_bc"},
    {CommandKind::kSetTemperature, "set_temperature"},
    {CommandKind::kMoveObstacle, "move_obstacle"},
    {CommandKind::kAddObstacle, "add_obstacle"},
    {CommandKind::kRemoveObject, "remove_object"},
    {CommandKind::kRefineRegion, "refine_region"},
    {CommandKind::kCoarsenRegion, "coarsen_region"},
};

bool finite(const Vec3& v) { return std::isfinite(v[0]) && std::isfinite(v[1]) && std::isfinite(v[2]); }

bool finite(const Box& b) { return finite(b.lo) && finite(b.hi); }

bool proper(const Box& b, int dims) {
  for (int a = 0; a < dims; ++a) {
    if (!(b.lo[static_cast<std::size_t>(a)] < b.hi[static_cast<std::size_t>(a)])) return false;
  }
  return finite(b);
}

const BoundaryObject* find_object(const Simulation& sim, const std::string& id) {
  for (const auto& o : sim.domain(0).objects) {
    if (o.id == id) return &o;
  }
  return nullptr;
}

// First leaf cell whose centre `shape` covers and whose current code is `code`.
std::optional<Vec3> covered_cell_with(const Simulation& sim, const solver::Shape& shape, CellCode code) {
  for (int r = 0; r < sim.ranks(); ++r) {
    const auto& d = sim.domain(r);
    for (std::size_t i = 0; i < d.grids.size(); ++i) {
      if (!d.is_leaf(i)) continue;
      const auto& g = d.grids[i];
      const auto h = solver::cell_size(g);
      const auto& s = g.layout().s();
      for (int k = 0; k < s[2]; ++k) {
        for (int j = 0; j < s[1]; ++j) {
          for (int x = 0; x < s[0]; ++x) {
            if (g.code(g.layout().idx(x, j, k)) != code) continue;
            const auto c = solver::cell_center(g, x, j, k);
            if (shape.covers(c, h, d.geom.domain)) return c;
          }
        }
      }
    }
  }
  return std::nullopt;
}

std::string describe(const Vec3& p) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "(%g, %g, %g)", p[0], p[1], p[2]);
  return buf;
}

std::optional<std::string> check_obstacle_shape(const Simulation& sim, const solver::Shape& shape) {
  if (shape.kind == solver::ShapeKind::kBox && !proper(shape.box, sim.geometry().dims())) {
    return "obstacle box is empty or not finite";
  }
  if (shape.kind == solver::ShapeKind::kCylinder && !(shape.radius > 0.0 && std::isfinite(shape.radius))) {
    return "cylinder radius must be positive";
  }
  if (const auto c = covered_cell_with(sim, shape, CellCode::kInflow)) {
    return "obstacle overlaps inflow cells at " + describe(*c);
  }
  return std::nullopt;
}

bool allowed_object_code(CellCode c) {
  return c == CellCode::kObstacle || c == CellCode::kWallNoSlip || c == CellCode::kWallSlip ||
         c == CellCode::kTempDirichlet;
}

std::uint32_t next_local(const solver::RankDomain& d) {
  std::uint32_t n = 0;
  for (const auto& g : d.grids) n = std::max(n, g.uid().local() + 1);
  return n;
}

// Child of `parent` at child index m with piecewise constant parent values.
DGrid make_child(const DGrid& parent, const spacetree::GridGeometry& geom, Uid uid, int m) {
  const auto loc = uid.location();
  DGrid child(uid, geom.bbox(loc), geom.s);
  const auto off = geom.child_offset(m);
  const auto& s = geom.s;
  const auto& P = parent.layout();
  const auto& C = child.layout();
  for (int k = 0; k < s[2]; ++k) {
    for (int j = 0; j < s[1]; ++j) {
      for (int i = 0; i < s[0]; ++i) {
        const int pi = (off[0] * s[0] + i) / geom.r[0];
        const int pj = (off[1] * s[1] + j) / geom.r[1];
        const int pk = (off[2] * s[2] + k) / geom.r[2];
        const auto src = P.idx(pi, pj, pk);
        const auto dst = C.idx(i, j, k);
        for (int f = 0; f < spacetree::kNumFields; ++f) {
          child.current.at(f, dst) = parent.current.at(f, src);
          child.previous.at(f, dst) = parent.previous.at(f, src);
          child.temp.at(f, dst) = parent.temp.at(f, src);
        }
        const auto plin = P.linear(src);
        child.set_cell_type(C.linear(dst), parent.code(src), parent.params(plin));
      }
    }
  }
  return child;
}

void sort_lebesgue(solver::RankDomain& d) {
  std::vector<std::size_t> order(d.grids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return spacetree::lebesgue_key(d.grids[a].uid()) < spacetree::lebesgue_key(d.grids[b].uid());
  });
  std::vector<DGrid> grids;
  std::vector<spacetree::LGrid> lgrids;
  for (const auto i : order) {
    grids.push_back(std::move(d.grids[i]));
    lgrids.push_back(std::move(d.lgrids[i]));
  }
  d.grids = std::move(grids);
  d.lgrids = std::move(lgrids);
}

void set_objects(Simulation& sim, const std::vector<BoundaryObject>& objects) {
  for (auto& d : sim.domains()) d.objects = objects;
}

}  // namespace

const char* to_string(CommandKind k) {
  for (const auto& [kind, name] : kNames) {
    if (kind == k) return name;
  }
  return "?";
}

CommandKind command_kind_from_string(const std::string& s) {
  for (const auto& [kind, name] : kNames) {
    if (s == name) return kind;
  }
  throw CommandRejected("unknown command kind '" + s + "'");
}

std::size_t leaf_count(const Simulation& sim) {
  std::size_t n = 0;
  for (int r = 0; r < sim.ranks(); ++r) {
    for (const auto& lg : sim.domain(r).lgrids) n += lg.is_leaf() ? 1 : 0;
  }
  return n;
}

std::optional<std::string> validate(const SteeringCommand& cmd, const Simulation& sim) {
  const auto& geom = sim.geometry();
  const int dims = geom.dims();
  switch (cmd.kind) {
    case CommandKind::kSetBc:
    case CommandKind::kSetTemperature: {
      const auto* o = find_object(sim, cmd.target);
      if (!o) return "no object '" + cmd.target + "'";
      if (cmd.kind == CommandKind::kSetTemperature) {
        if (!cmd.temperature) return "set_temperature needs a temperature";
        if (o->code != CellCode::kTempDirichlet && o->code != CellCode::kInflow) {
          return "object '" + cmd.target + "' has no prescribed temperature";
        }
      }
      if (cmd.temperature && !(std::isfinite(*cmd.temperature) && *cmd.temperature > 0.0)) {
        return "temperature must be a positive finite value in K";
      }
      if (cmd.velocity && !finite(*cmd.velocity)) return "velocity must be finite";
      if (cmd.code && *cmd.code == CellCode::kFluid) return "use remove_object to turn an object into fluid";
      if (cmd.code && *cmd.code != o->code && *cmd.code != CellCode::kInflow && *cmd.code != CellCode::kOutflow) {
        if (const auto why = check_obstacle_shape(sim, o->shape)) return why;
      }
      return std::nullopt;
    }
    case CommandKind::kMoveObstacle: {
      const auto* o = find_object(sim, cmd.target);
      if (!o) return "no object '" + cmd.target + "'";
      if (o->shape.kind == solver::ShapeKind::kFace) return "face objects cannot move";
      if (!finite(cmd.offset)) return "offset must be finite";
      if (dims == 2 && cmd.offset[2] != 0.0) return "2D domains move objects in x and y only";
      return check_obstacle_shape(sim, o->shape.translated(cmd.offset));
    }
    case CommandKind::kAddObstacle: {
      if (!cmd.object) return "add_obstacle needs an object";
      const auto& o = *cmd.object;
      if (o.id.empty()) return "object id must not be empty";
      if (find_object(sim, o.id)) return "object '" + o.id + "' already exists";
      if (!allowed_object_code(o.code)) return std::string("objects cannot carry code ") + spacetree::to_string(o.code);
      if (o.shape.kind == solver::ShapeKind::kFace) return "add_obstacle takes a box or a cylinder";
      if (o.shape.kind == solver::ShapeKind::kBox && !o.shape.box.overlaps(geom.domain)) {
        return "obstacle box lies outside the domain";
      }
      if (o.shape.kind == solver::ShapeKind::kCylinder && !geom.domain.contains(o.shape.center)) {
        return "cylinder axis lies outside the domain";
      }
      return check_obstacle_shape(sim, o.shape);
    }
    case CommandKind::kRemoveObject:
      if (!find_object(sim, cmd.target)) return "no object '" + cmd.target + "'";
      return std::nullopt;
    case CommandKind::kRefineRegion:
    case CommandKind::kCoarsenRegion:
      if (!proper(cmd.region, dims)) return "region is empty or not finite";
      if (!cmd.region.overlaps(geom.domain)) return "region lies outside the domain";
      if (cmd.depth < 0 || cmd.depth > geom.max_depth) {
        return "depth must lie in [0, " + std::to_string(geom.max_depth) + "]";
      }
      return std::nullopt;
  }
  return "unknown command";
}

void apply(Simulation& sim, const SteeringCommand& cmd) {
  if (const auto why = validate(cmd, sim)) throw CommandRejected(*why);
  auto objects = sim.domain(0).objects;
  const auto obj = std::find_if(objects.begin(), objects.end(), [&](const auto& o) { return o.id == cmd.target; });
  switch (cmd.kind) {
    case CommandKind::kSetBc:
    case CommandKind::kSetTemperature:
      if (cmd.code) obj->code = *cmd.code;
      if (cmd.velocity) obj->params.velocity = *cmd.velocity;
      if (cmd.temperature) obj->params.temperature = *cmd.temperature;
      break;
    case CommandKind::kMoveObstacle:
      obj->shape = obj->shape.translated(cmd.offset);
      break;
    case CommandKind::kAddObstacle:
      objects.push_back(*cmd.object);
      break;
    case CommandKind::kRemoveObject:
      objects.erase(obj);
      break;
    case CommandKind::kRefineRegion:
      refine_region(sim, cmd.region, cmd.depth);
      sim.reconnect(true);
      return;
    case CommandKind::kCoarsenRegion:
      coarsen_region(sim, cmd.region, cmd.depth);
      sim.reconnect(true);
      return;
  }
  set_objects(sim, objects);
  sim.spmd([](comm::Communicator& c, solver::RankDomain& d) { d.restamp(c); });
}

std::size_t refine_region(Simulation& sim, const Box& region, int depth) {
  const auto& geom = sim.geometry();
  if (depth > geom.max_depth) throw CommandRejected("refinement depth exceeds max_depth");
  std::size_t added = 0;
  for (auto& d : sim.domains()) {
    auto local = next_local(d);
    // Children are appended, so the scan also refines them further.
    for (std::size_t i = 0; i < d.grids.size(); ++i) {
      if (!d.lgrids[i].is_leaf() || d.grids[i].depth() >= depth || !d.grids[i].bbox().overlaps(region)) continue;
      const auto loc = d.grids[i].location();
      std::vector<Uid> kids;
      for (int m = 0; m < geom.children_per_grid(); ++m) {
        if (local > spacetree::kMaxLocal) throw CommandRejected("rank " + std::to_string(d.rank) + " is out of grid ids");
        kids.push_back(Uid::make(static_cast<std::uint32_t>(d.rank), local++, loc.child(m)));
      }
      d.lgrids[i].children = kids;
      for (int m = 0; m < geom.children_per_grid(); ++m) {
        auto child = make_child(d.grids[i], geom, kids[static_cast<std::size_t>(m)], m);
        d.lgrids.push_back({child.uid(), child.bbox(), {}, true});
        d.grids.push_back(std::move(child));
      }
      added += static_cast<std::size_t>(geom.children_per_grid() - 1);
    }
    sort_lebesgue(d);
  }
  return added;
}

std::size_t coarsen_region(Simulation& sim, const Box& region, int depth) {
  std::set<Location> cut;
  for (const auto& d : sim.domains()) {
    for (std::size_t i = 0; i < d.grids.size(); ++i) {
      if (d.grids[i].depth() == depth && !d.lgrids[i].is_leaf() && region.contains(d.grids[i].bbox())) {
        cut.insert(d.grids[i].location());
      }
    }
  }
  const auto doomed = [&](Location loc) {
    for (int a = loc.depth() - 1; a >= depth && a >= 0; --a) {
      if (cut.count(loc.ancestor(a))) return true;
    }
    return false;
  };
  for (const auto& d : sim.domains()) {
    const auto keep = std::count_if(d.grids.begin(), d.grids.end(), [&](const DGrid& g) { return !doomed(g.location()); });
    if (keep == 0) {
      throw CommandRejected("coarsening would leave rank " + std::to_string(d.rank) + " without grids");
    }
  }
  std::size_t removed = 0;
  for (auto& d : sim.domains()) {
    std::vector<DGrid> grids;
    std::vector<spacetree::LGrid> lgrids;
    for (std::size_t i = 0; i < d.grids.size(); ++i) {
      if (doomed(d.grids[i].location())) {
        ++removed;
        continue;
      }
      if (cut.count(d.grids[i].location())) d.lgrids[i].children.clear();
      grids.push_back(std::move(d.grids[i]));
      lgrids.push_back(std::move(d.lgrids[i]));
    }
    d.grids = std::move(grids);
    d.lgrids = std::move(lgrids);
  }
  return removed;
}

}  // namespace trsflow::steering
