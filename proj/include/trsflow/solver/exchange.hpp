#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "trsflow/comm/communicator.hpp"
#include "trsflow/spacetree/dgrid.hpp"
#include "trsflow/topology/repo.hpp"

namespace trsflow::solver {

using comm::Communicator;
using spacetree::DGrid;
using spacetree::GridGeometry;
using spacetree::Uid;

enum class Buf : std::uint8_t { kCurrent, kPrevious, kTemp, kWork };

/// One padded scalar array of every d-grid: a field of one of the three
/// buffers, or a solver work channel.
struct Channel {
  Buf buf = Buf::kCurrent;
  int index = 0;
};

/// Solver work channels of every d-grid.
enum Work : int {
  kGx = 0, kGy = 1, kGz = 2,
  kR = 3, kRhat = 4, kPdir = 5, kAp = 6, kY = 7, kS = 8, kAs = 9,
  kMgZ = 10, kMgB = 11, kMgRes = 12,
};
inline constexpr int kNumWork = 13;

[[nodiscard]] std::span<double> channel_data(DGrid& g, Channel c);

/// Restricted cell type: outflow beats fluid, fluid beats the solid kinds.
[[nodiscard]] int code_priority(spacetree::CellCode c);

/// Communication plan of one rank: halo links (face of a destination grid
/// filled from a same-depth or coarser source) and tree links (child/parent
/// pairs used for averaging and injection). Every round is collective; ranks
/// issue the same sequence of rounds.
class Exchanger {
 public:
  enum class Phase { kHorizontal, kTopDown, kBoth };

  void build(const topology::TopologyRepo& repo, int rank, const std::vector<DGrid>& grids);

  [[nodiscard]] int deepest() const { return deepest_; }

  /// Sets every parent at child_depth-1 to the mean of its children's cells.
  /// With internal_only, leaf children are skipped.
  void restrict_level(Communicator& c, std::vector<DGrid>& grids, int child_depth, std::span<const Channel> ch,
                      bool internal_only = false);
  /// Bottom-up sweep over all depths, deepest first.
  void restrict_all(Communicator& c, std::vector<DGrid>& grids, std::span<const Channel> ch);
  /// Adds to every cell of the grids at child_depth the parent field
  /// interpolated linearly to the cell centre (first refreshes the parent
  /// halos). Non-fluid parent neighbours contribute the parent cell's own
  /// value, outflow neighbours zero.
  void prolong_add(Communicator& c, std::vector<DGrid>& grids, int child_depth, Channel ch,
                   bool internal_only = false);
  /// For every leaf child: parent cell <- the child cell at position m of its
  /// r_x*r_y*r_z group (one parity class of the child's cells).
  void inject_parity(Communicator& c, std::vector<DGrid>& grids, Channel from, Channel to, int m);
  /// Inverse direction: leaf child cell at position m <- covering parent cell.
  void prolong_parity(Communicator& c, std::vector<DGrid>& grids, Channel from, Channel to, int m);
  [[nodiscard]] int group() const { return group_; }
  /// Fills face halos; dst_depth < 0 selects all depths.
  void halo(Communicator& c, std::vector<DGrid>& grids, std::span<const Channel> ch, Phase phase, int dst_depth = -1);
  /// Halo cells not fed by a link (domain boundary faces, edges and corners)
  /// take the value of the nearest interior cell.
  void fill_unlinked(std::vector<DGrid>& grids, std::span<const Channel> ch, int depth = -1) const;

  /// Bottom-up, horizontal and top-down phases followed by fill_unlinked.
  void ghost_update(Communicator& c, std::vector<DGrid>& grids, std::span<const Channel> ch);

  /// Same three phases for the cell types. Interior grids receive restricted
  /// codes (and the parameters of the chosen child cell); unlinked halo cells
  /// become no-slip walls.
  void update_codes(Communicator& c, std::vector<DGrid>& grids);

 private:
  struct HaloLink {
    Uid dst;
    Uid src;
    int face = 0;
    int dst_rank = 0;
    int src_rank = 0;
    int dst_local = -1;
    int src_local = -1;
    int depth = 0;  // depth of dst
    int delta = 0;
    std::vector<std::int32_t> src_idx;
    std::vector<std::int32_t> dst_idx;
  };
  struct TreeLink {
    Uid parent;
    Uid child;
    int parent_rank = 0;
    int child_rank = 0;
    int parent_local = -1;
    int child_local = -1;
    int child_depth = 0;
    bool child_leaf = false;
    std::vector<std::int32_t> parent_block;  // parent cells covered by the child, block order
    std::vector<std::int32_t> child_groups;  // per block cell, the child cells it covers
  };

  // Runs one collective exchange over links[i] for i in `which` (global order).
  template <class Link, class Select, class Pack, class Unpack>
  void round(Communicator& c, const std::vector<Link>& links, const std::vector<int>& which, Select select,
             bool src_is_first, Pack pack, Unpack unpack);

  int rank_ = 0;
  int deepest_ = 0;
  int group_ = 1;  // children cells per parent cell
  spacetree::Index3 r_{1, 1, 1};
  std::uint64_t tag_ = 0;
  std::vector<HaloLink> halo_links_;
  std::vector<TreeLink> tree_links_;
  [[nodiscard]] const std::vector<int>& trees_at(int child_depth) const;

  std::vector<double> scratch_;
  std::vector<int> all_halo_;
  std::vector<int> all_tree_;
  std::vector<std::vector<int>> halo_at_;  // by destination depth
  std::vector<std::vector<int>> tree_at_;  // by child depth
  std::vector<std::vector<std::pair<std::int32_t, std::int32_t>>> unlinked_;  // per local grid
};

}  // namespace trsflow::solver
