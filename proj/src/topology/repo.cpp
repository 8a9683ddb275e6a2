#include "trsflow/topology/repo.hpp"

#include <algorithm>

namespace trsflow::topology {

using spacetree::lebesgue_key;

TopologyRepo::TopologyRepo(GridGeometry geom) : geom_(geom) { geom_.validate(); }

void TopologyRepo::register_grids(std::uint32_t rank, std::span<const LGrid> grids) {
  for (const auto& g : grids) {
    (void)g.uid.decode();  // rejects the sentinel and malformed values
    if (g.uid.rank() != rank) {
      throw TopologyError("grid " + g.uid.hex() + " does not belong to rank " + std::to_string(rank));
    }
    if (!g.children.empty() && g.children.size() != static_cast<std::size_t>(geom_.children_per_grid())) {
      throw TopologyError("grid " + g.uid.hex() + " has a partial child set");
    }
    const auto it = grids_.find(g.uid);
    if (it != grids_.end()) {
      if (!(it->second == g)) throw TopologyError("conflicting registration for grid " + g.uid.hex());
      continue;
    }
    const auto loc = by_location_.find(g.uid.location());
    if (loc != by_location_.end()) {
      throw TopologyError("location of " + g.uid.hex() + " already held by " + loc->second.hex());
    }
    grids_.emplace(g.uid, g);
    by_location_.emplace(g.uid.location(), g.uid);
    residency_[g.uid] = rank;
  }
}

void TopologyRepo::clear() {
  grids_.clear();
  by_location_.clear();
  residency_.clear();
}

const LGrid& TopologyRepo::grid(Uid uid) const {
  const auto it = grids_.find(uid);
  if (it == grids_.end()) throw TopologyError("unregistered grid " + uid.hex());
  return it->second;
}

std::optional<Uid> TopologyRepo::find(Location loc) const {
  const auto it = by_location_.find(loc);
  if (it == by_location_.end()) return std::nullopt;
  return it->second;
}

std::uint32_t TopologyRepo::locate(Uid uid) const {
  const auto it = residency_.find(uid);
  if (it == residency_.end()) throw TopologyError("unregistered grid " + uid.hex());
  return it->second;
}

Uid TopologyRepo::root() const {
  const auto r = find(Location::root());
  if (!r) throw TopologyError("root grid not registered");
  return *r;
}

std::vector<Uid> TopologyRepo::ordered() const {
  std::vector<Uid> out;
  out.reserve(grids_.size());
  for (const auto& [uid, g] : grids_) out.push_back(uid);
  std::sort(out.begin(), out.end(), [](Uid a, Uid b) { return lebesgue_key(a) < lebesgue_key(b); });
  return out;
}

std::vector<Uid> TopologyRepo::leaves() const {
  auto all = ordered();
  std::erase_if(all, [&](Uid u) { return !grids_.at(u).is_leaf(); });
  return all;
}

std::optional<HaloSource> TopologyRepo::halo_source(Location loc, int face) const {
  const int d = loc.depth();
  auto c = geom_.coords(loc);
  const int a = face_axis(face);
  c[a] += face_sign(face);
  const auto n = geom_.grids_per_axis(d);
  if (c[a] < 0 || c[a] >= n[a]) return std::nullopt;
  const Location same = geom_.location_at(d, c);
  for (int up = d; up >= 0; --up) {
    const Location cand = same.ancestor(up);
    if (by_location_.count(cand) != 0) return HaloSource{cand, up - d};
  }
  throw TopologyError("no grid covers the neighbourhood of a registered grid");
}

void TopologyRepo::finer_on_face(Location loc, int face_toward_query, std::vector<Location>& out) const {
  const auto uid = by_location_.at(loc);
  const auto& g = grids_.at(uid);
  if (g.is_leaf()) {
    out.push_back(loc);
    return;
  }
  const int a = face_axis(face_toward_query);
  const int want = face_sign(face_toward_query) > 0 ? geom_.r[a] - 1 : 0;
  for (int ci = 0; ci < geom_.children_per_grid(); ++ci) {
    if (geom_.child_offset(ci)[a] == want) finer_on_face(loc.child(ci), face_toward_query, out);
  }
}

std::vector<Neighbor> TopologyRepo::neighbors(Uid uid) const {
  const auto& self = grid(uid);
  const Location loc = self.uid.location();
  std::vector<Neighbor> out;
  for (int f = 0; f < kNumFaces; ++f) {
    const auto src = halo_source(loc, f);
    if (!src) continue;
    std::vector<Location> found;
    if (src->level_delta == 0) {
      finer_on_face(src->src, opposite(f), found);
    } else {
      found.push_back(src->src);
    }
    for (const Location l : found) {
      const Uid nu = by_location_.at(l);
      out.push_back(Neighbor{nu, residency_.at(nu), f, l.depth() - loc.depth()});
    }
  }
  return out;
}

void TopologyRepo::check_closed() const {
  (void)root();
  for (const auto& [uid, g] : grids_) {
    for (const Uid c : g.children) {
      if (!contains(c)) throw TopologyError("grid " + uid.hex() + " links unregistered child " + c.hex());
      if (c.location().parent() != uid.location()) {
        throw TopologyError("child " + c.hex() + " is not located below " + uid.hex());
      }
    }
  }
}

}  // namespace trsflow::topology
