#include "trsflow/spacetree/tree.hpp"

#include <algorithm>

namespace trsflow::spacetree {

SpaceTree::SpaceTree(GridGeometry geom) : geom_(geom) {
  geom_.validate();
  const Location root = Location::root();
  nodes_.emplace(lebesgue_key(root), root);
  refined_[root] = false;
}

SpaceTree SpaceTree::build(const GridGeometry& geom, std::span<const RefineRegion> regions) {
  for (const auto& reg : regions) {
    if (reg.depth < 0 || reg.depth > geom.max_depth) {
      throw ConfigError("refine region depth " + std::to_string(reg.depth) + " exceeds max_depth " +
                        std::to_string(geom.max_depth));
    }
  }
  SpaceTree tree(geom);
  tree.refine_recursive(Location::root(), regions);
  return tree;
}

SpaceTree SpaceTree::uniform(const GridGeometry& geom, int depth) {
  const RefineRegion all{geom.domain, depth};
  return build(geom, std::span<const RefineRegion>(&all, 1));
}

void SpaceTree::refine_recursive(Location loc, std::span<const RefineRegion> regions) {
  const Box box = geom_.bbox(loc);
  int wanted = 0;
  for (const auto& reg : regions) {
    if (box.overlaps(reg.box)) wanted = std::max(wanted, reg.depth);
  }
  if (wanted <= loc.depth()) return;
  refine(loc);
  for (const Location c : children(loc)) refine_recursive(c, regions);
}

bool SpaceTree::is_leaf(Location loc) const {
  const auto it = refined_.find(loc);
  if (it == refined_.end()) throw ConfigError("grid not in tree");
  return !it->second;
}

std::vector<Location> SpaceTree::children(Location loc) const {
  if (is_leaf(loc)) return {};
  std::vector<Location> out;
  out.reserve(static_cast<std::size_t>(geom_.children_per_grid()));
  for (int c = 0; c < geom_.children_per_grid(); ++c) out.push_back(loc.child(c));
  return out;
}

std::vector<Location> SpaceTree::grids() const {
  std::vector<Location> out;
  out.reserve(nodes_.size());
  for (const auto& [key, loc] : nodes_) out.push_back(loc);
  return out;
}

std::vector<Location> SpaceTree::leaves() const {
  std::vector<Location> out;
  for (const auto& [key, loc] : nodes_) {
    if (!refined_.at(loc)) out.push_back(loc);
  }
  return out;
}

std::size_t SpaceTree::leaf_count() const {
  return static_cast<std::size_t>(
      std::count_if(refined_.begin(), refined_.end(), [](const auto& kv) { return !kv.second; }));
}

int SpaceTree::deepest() const {
  int d = 0;
  for (const auto& [key, loc] : nodes_) d = std::max(d, loc.depth());
  return d;
}

void SpaceTree::refine(Location leaf) {
  if (!is_leaf(leaf)) throw ConfigError("refine: grid already refined");
  if (leaf.depth() >= geom_.max_depth) throw ConfigError("refine: grid already at max_depth");
  refined_[leaf] = true;
  for (int c = 0; c < geom_.children_per_grid(); ++c) {
    const Location ch = leaf.child(c);
    nodes_.emplace(lebesgue_key(ch), ch);
    refined_[ch] = false;
  }
}

void SpaceTree::coarsen(Location loc) {
  if (is_leaf(loc)) return;
  for (const Location c : children(loc)) {
    coarsen(c);
    nodes_.erase(lebesgue_key(c));
    refined_.erase(c);
  }
  refined_[loc] = false;
}

std::vector<std::size_t> partition_sizes(std::size_t count, int ranks) {
  if (ranks < 1) throw ConfigError("rank count must be >= 1");
  if (count < static_cast<std::size_t>(ranks)) {
    throw ConfigError("more ranks (" + std::to_string(ranks) + ") than grids (" + std::to_string(count) + ")");
  }
  const std::size_t p = static_cast<std::size_t>(ranks);
  std::vector<std::size_t> sizes(p, count / p);
  for (std::size_t i = 0; i < count % p; ++i) ++sizes[i];
  return sizes;
}

std::vector<std::uint32_t> partition(std::size_t count, int ranks) {
  const auto sizes = partition_sizes(count, ranks);
  std::vector<std::uint32_t> out;
  out.reserve(count);
  for (std::size_t r = 0; r < sizes.size(); ++r) out.insert(out.end(), sizes[r], static_cast<std::uint32_t>(r));
  return out;
}

std::map<Location, Uid> assign_uids(const SpaceTree& tree, int ranks) {
  const auto order = tree.grids();
  const auto owner = partition(order.size(), ranks);
  std::map<Location, Uid> out;
  std::uint32_t local = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i > 0 && owner[i] != owner[i - 1]) local = 0;
    out.emplace(order[i], Uid::make(owner[i], local++, order[i]));
  }
  return out;
}

std::vector<LGrid> make_lgrids(const SpaceTree& tree, const std::map<Location, Uid>& uids) {
  std::vector<LGrid> out;
  for (const Location loc : tree.grids()) {
    LGrid g;
    g.uid = uids.at(loc);
    g.bbox = tree.geometry().bbox(loc);
    for (const Location c : tree.children(loc)) g.children.push_back(uids.at(c));
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace trsflow::spacetree
