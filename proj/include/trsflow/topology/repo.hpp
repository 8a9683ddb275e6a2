#pragma once

#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "trsflow/spacetree/geometry.hpp"
#include "trsflow/spacetree/tree.hpp"
#include "trsflow/spacetree/uid.hpp"

namespace trsflow::topology {

using spacetree::Box;
using spacetree::GridGeometry;
using spacetree::LGrid;
using spacetree::Location;
using spacetree::Uid;

class TopologyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Faces are numbered 2*axis + (positive side ? 1 : 0): -x, +x, -y, +y, -z, +z.
inline constexpr int kNumFaces = 6;
[[nodiscard]] constexpr int face_axis(int face) { return face / 2; }
[[nodiscard]] constexpr int face_sign(int face) { return face % 2 == 1 ? 1 : -1; }
[[nodiscard]] constexpr int opposite(int face) { return face ^ 1; }

struct Neighbor {
  Uid uid;
  std::uint32_t rank = 0;
  int face = 0;
  int level_delta = 0;  // depth(neighbour) - depth(query)

  bool operator==(const Neighbor&) const = default;
};

/// Where the halo layer of a grid on one face comes from.
struct HaloSource {
  Location src;
  /// 0: a grid of the same depth (leaf, or interior holding restricted data);
  /// < 0: a coarser leaf whose cells are injected.
  int level_delta = 0;
};

/// Registry of the logical grid structure and of grid residency.
class TopologyRepo {
 public:
  explicit TopologyRepo(GridGeometry geom);

  [[nodiscard]] const GridGeometry& geometry() const { return geom_; }

  /// Registers grids owned by `rank`. Re-registering identical data is a no-op.
  void register_grids(std::uint32_t rank, std::span<const LGrid> grids);
  void clear();

  [[nodiscard]] std::size_t size() const { return grids_.size(); }
  [[nodiscard]] bool contains(Uid uid) const { return grids_.count(uid) != 0; }
  [[nodiscard]] const LGrid& grid(Uid uid) const;
  [[nodiscard]] std::optional<Uid> find(Location loc) const;
  [[nodiscard]] std::uint32_t locate(Uid uid) const;
  [[nodiscard]] Uid root() const;

  /// Every registered grid in Lebesgue order.
  [[nodiscard]] std::vector<Uid> ordered() const;
  [[nodiscard]] std::vector<Uid> leaves() const;

  /// Leaf d-grids sharing a face of positive area with `uid`: the same-depth
  /// grid when it is a leaf, the finer leaves covering the face when it is
  /// refined, or the coarser leaf containing the face otherwise.
  [[nodiscard]] std::vector<Neighbor> neighbors(Uid uid) const;

  /// Source of the halo on `face` of the grid at `loc`; empty on the domain boundary.
  [[nodiscard]] std::optional<HaloSource> halo_source(Location loc, int face) const;

  /// Throws TopologyError unless the root is present and every child link resolves.
  void check_closed() const;

 private:
  void finer_on_face(Location loc, int face_toward_query, std::vector<Location>& out) const;

  GridGeometry geom_;
  std::unordered_map<Uid, LGrid> grids_;
  std::unordered_map<Location, Uid> by_location_;
  std::unordered_map<Uid, std::uint32_t> residency_;
};

/// The neighbourhood server: a single authority holding the registry. Calls
/// from compute ranks are serialized, which stands in for the request/reply
/// traffic with a dedicated process (logical rank index P).
class TopologyServer {
 public:
  TopologyServer(GridGeometry geom, int compute_ranks) : repo_(geom), rank_index_(compute_ranks) {}

  [[nodiscard]] int rank_index() const { return rank_index_; }

  void register_grids(std::uint32_t rank, std::span<const LGrid> grids) {
    std::lock_guard lock(mutex_);
    repo_.register_grids(rank, grids);
  }
  void clear() {
    std::lock_guard lock(mutex_);
    repo_.clear();
  }
  [[nodiscard]] std::uint32_t locate(Uid uid) const {
    std::lock_guard lock(mutex_);
    return repo_.locate(uid);
  }
  [[nodiscard]] std::vector<Neighbor> neighbors(Uid uid) const {
    std::lock_guard lock(mutex_);
    return repo_.neighbors(uid);
  }

  /// Runs `fn(const TopologyRepo&)` under the server lock.
  template <class F>
  decltype(auto) with_repo(F&& fn) const {
    std::lock_guard lock(mutex_);
    return fn(static_cast<const TopologyRepo&>(repo_));
  }

 private:
  mutable std::mutex mutex_;
  TopologyRepo repo_;
  int rank_index_;
};

}  // namespace trsflow::topology
