#include "trsflow/solver/domain.hpp"

#include <algorithm>

namespace trsflow::solver {

using spacetree::kNumFields;

int RankDomain::find(Uid uid) const {
  for (std::size_t i = 0; i < grids.size(); ++i) {
    if (grids[i].uid() == uid) return static_cast<int>(i);
  }
  return -1;
}

void RankDomain::connect(Communicator& c, topology::TopologyServer& server, bool stamp) {
  c.barrier();
  if (c.rank() == 0) server.clear();
  c.barrier();
  server.register_grids(static_cast<std::uint32_t>(rank), lgrids);
  c.barrier();
  server.with_repo([&](const topology::TopologyRepo& repo) { ex.build(repo, rank, grids); });
  for (auto& g : grids) g.ensure_work(kNumWork);
  if (stamp) {
    restamp(c);
  } else {
    propagate_codes(c);
  }
}

void RankDomain::restamp(Communicator& c) {
  for (std::size_t i = 0; i < grids.size(); ++i) {
    if (!is_leaf(i)) continue;
    stamp_cell_types(grids[i], geom, objects);
    apply_boundary_values(grids[i], grids[i].current, dims());
  }
  propagate_codes(c);
  std::vector<Channel> all;
  for (int f = 0; f < kNumFields; ++f) all.push_back({Buf::kCurrent, f});
  ex.restrict_all(c, grids, all);
}

void RankDomain::propagate_codes(Communicator& c) {
  bool outflow = false;
  for (std::size_t i = 0; i < grids.size(); ++i) {
    if (!is_leaf(i)) continue;
    const auto& L = grids[i].layout();
    for (std::int64_t lin = 0; lin < L.cells(); ++lin) {
      outflow = outflow || grids[i].code(L.interior(lin)) == CellCode::kOutflow;
    }
  }
  ex.update_codes(c, grids);
  fluid_index.assign(grids.size(), {});
  for (std::size_t i = 0; i < grids.size(); ++i) {
    const auto& L = grids[i].layout();
    for (std::int64_t lin = 0; lin < L.cells(); ++lin) {
      if (grids[i].code(L.interior(lin)) == CellCode::kFluid) fluid_index[i].push_back(static_cast<std::int32_t>(L.interior(lin)));
    }
  }
  has_outflow = c.allreduce_or(outflow);
  deepest = static_cast<int>(c.allreduce_max(static_cast<double>(ex.deepest())));

  pin_grid = -1;
  pin_cell = -1;
  int first_grid = -1;
  std::ptrdiff_t first_cell = -1;
  for (std::size_t i = 0; i < grids.size() && first_grid < 0; ++i) {
    if (!is_leaf(i)) continue;
    const auto& L = grids[i].layout();
    for (std::int64_t lin = 0; lin < L.cells(); ++lin) {
      if (grids[i].code(L.interior(lin)) == CellCode::kFluid) {
        first_grid = static_cast<int>(i);
        first_cell = L.interior(lin);
        break;
      }
    }
  }
  const auto owners = c.allgather(first_grid >= 0);
  const auto owner = std::find(owners.begin(), owners.end(), true) - owners.begin();
  if (!has_outflow && owner == c.rank()) {
    pin_grid = first_grid;
    pin_cell = first_cell;
  }
}

spacetree::SpaceTree build_tree(const DomainSetup& setup) {
  return spacetree::SpaceTree::build(setup.geom, setup.refine);
}

RankDomain build_rank_domain(const DomainSetup& setup, int rank, int ranks) {
  setup.geom.validate();
  setup.fluid.validate();
  setup.params.validate();
  RankDomain d;
  d.rank = rank;
  d.ranks = ranks;
  d.geom = setup.geom;
  d.fluid = setup.fluid;
  d.params = setup.params;
  d.objects = setup.objects;

  const auto tree = build_tree(setup);
  const auto uids = spacetree::assign_uids(tree, ranks);
  const double T0 = setup.T0.value_or(setup.fluid.T_inf);
  for (auto& lg : spacetree::make_lgrids(tree, uids)) {
    if (static_cast<int>(lg.uid.rank()) != rank) continue;
    DGrid g(lg.uid, lg.bbox, setup.geom.s);
    const auto& s = setup.geom.s;
    for (int k = 0; k < s[2]; ++k) {
      for (int j = 0; j < s[1]; ++j) {
        for (int i = 0; i < s[0]; ++i) {
          std::array<double, 5> v{setup.u0[0], setup.u0[1], setup.u0[2], 0.0, T0};
          if (setup.init) v = setup.init(cell_center(g, i, j, k));
          const auto p = g.layout().idx(i, j, k);
          for (int f = 0; f < kNumFields; ++f) g.current.at(f, p) = v[static_cast<std::size_t>(f)];
        }
      }
    }
    g.previous = g.current;
    d.grids.push_back(std::move(g));
    d.lgrids.push_back(std::move(lg));
  }
  return d;
}

}  // namespace trsflow::solver
