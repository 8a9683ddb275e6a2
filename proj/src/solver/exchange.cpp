#include "trsflow/solver/exchange.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace trsflow::solver {

using spacetree::BcParams;
using spacetree::CellCode;
using spacetree::Index3;
using spacetree::Layout;
using spacetree::Location;
using topology::face_axis;
using topology::face_sign;
using topology::kNumFaces;

std::span<double> channel_data(DGrid& g, Channel c) {
  switch (c.buf) {
    case Buf::kCurrent: return g.current.field(c.index);
    case Buf::kPrevious: return g.previous.field(c.index);
    case Buf::kTemp: return g.temp.field(c.index);
    case Buf::kWork: return g.work(c.index);
  }
  return {};
}

int code_priority(CellCode c) {
  switch (c) {
    case CellCode::kOutflow: return 2;
    case CellCode::kFluid: return 1;
    default: return 0;
  }
}

void Exchanger::build(const topology::TopologyRepo& repo, int rank, const std::vector<DGrid>& grids) {
  const GridGeometry& geom = repo.geometry();
  const Index3 s = geom.s;
  const Layout L(s);
  rank_ = rank;
  group_ = geom.children_per_grid();
  r_ = geom.r;
  halo_links_.clear();
  tree_links_.clear();

  std::unordered_map<Uid, int> local;
  for (std::size_t i = 0; i < grids.size(); ++i) local.emplace(grids[i].uid(), static_cast<int>(i));
  const auto local_of = [&](Uid u) {
    const auto it = local.find(u);
    return it == local.end() ? -1 : it->second;
  };

  const auto ordered = repo.ordered();
  deepest_ = 0;
  for (const Uid u : ordered) deepest_ = std::max(deepest_, u.depth());

  for (const Uid uid : ordered) {
    const Location loc = uid.location();
    const int owner = static_cast<int>(repo.locate(uid));
    const auto cd = geom.coords(loc);
    for (int f = 0; f < kNumFaces; ++f) {
      const auto src = repo.halo_source(loc, f);
      if (!src) continue;
      const Uid su = *repo.find(src->src);
      const int src_rank = static_cast<int>(repo.locate(su));
      if (owner != rank && src_rank != rank) continue;
      HaloLink l;
      l.dst = uid;
      l.src = su;
      l.face = f;
      l.dst_rank = owner;
      l.src_rank = src_rank;
      l.dst_local = owner == rank ? local_of(uid) : -1;
      l.src_local = src_rank == rank ? local_of(su) : -1;
      l.depth = loc.depth();
      l.delta = src->level_delta;
      const auto cs = geom.coords(src->src);
      std::array<std::int64_t, 3> factor{1, 1, 1};
      for (int a = 0; a < 3; ++a) {
        for (int d = 0; d < -l.delta; ++d) factor[a] *= geom.r[a];
      }
      const int a = face_axis(f);
      Index3 lo{0, 0, 0};
      Index3 hi = s;
      lo[a] = face_sign(f) < 0 ? -1 : s[a];
      hi[a] = lo[a] + 1;
      for (int k = lo[2]; k < hi[2]; ++k) {
        for (int j = lo[1]; j < hi[1]; ++j) {
          for (int i = lo[0]; i < hi[0]; ++i) {
            if (l.dst_local >= 0) l.dst_idx.push_back(static_cast<std::int32_t>(L.idx(i, j, k)));
            if (l.src_local >= 0) {
              const int loc_d[3] = {i, j, k};
              int loc_s[3];
              for (int b = 0; b < 3; ++b) {
                const std::int64_t g = cd[b] * s[b] + loc_d[b];
                loc_s[b] = static_cast<int>(g / factor[b] - cs[b] * s[b]);
              }
              l.src_idx.push_back(static_cast<std::int32_t>(L.idx(loc_s[0], loc_s[1], loc_s[2])));
            }
          }
        }
      }
      halo_links_.push_back(std::move(l));
    }

    if (loc.depth() == 0) continue;
    const Uid pu = *repo.find(loc.parent());
    const int parent_rank = static_cast<int>(repo.locate(pu));
    if (owner != rank && parent_rank != rank) continue;
    TreeLink t;
    t.parent = pu;
    t.child = uid;
    t.parent_rank = parent_rank;
    t.child_rank = owner;
    t.parent_local = parent_rank == rank ? local_of(pu) : -1;
    t.child_local = owner == rank ? local_of(uid) : -1;
    t.child_depth = loc.depth();
    t.child_leaf = repo.grid(uid).is_leaf();
    const Index3 off = geom.child_offset(loc.digit(loc.depth()));
    Index3 block{};
    for (int a = 0; a < 3; ++a) block[a] = s[a] / geom.r[a];
    for (int bk = 0; bk < block[2]; ++bk) {
      for (int bj = 0; bj < block[1]; ++bj) {
        for (int bi = 0; bi < block[0]; ++bi) {
          if (t.parent_local >= 0) {
            t.parent_block.push_back(static_cast<std::int32_t>(
                L.idx(off[0] * block[0] + bi, off[1] * block[1] + bj, off[2] * block[2] + bk)));
          }
          if (t.child_local >= 0) {
            for (int cz = 0; cz < geom.r[2]; ++cz) {
              for (int cy = 0; cy < geom.r[1]; ++cy) {
                for (int cx = 0; cx < geom.r[0]; ++cx) {
                  t.child_groups.push_back(static_cast<std::int32_t>(
                      L.idx(bi * geom.r[0] + cx, bj * geom.r[1] + cy, bk * geom.r[2] + cz)));
                }
              }
            }
          }
        }
      }
    }
    tree_links_.push_back(std::move(t));
  }

  all_halo_.clear();
  all_tree_.clear();
  halo_at_.assign(static_cast<std::size_t>(deepest_) + 1, {});
  tree_at_.assign(static_cast<std::size_t>(deepest_) + 1, {});
  for (std::size_t i = 0; i < halo_links_.size(); ++i) {
    all_halo_.push_back(static_cast<int>(i));
    halo_at_[static_cast<std::size_t>(halo_links_[i].depth)].push_back(static_cast<int>(i));
  }
  for (std::size_t i = 0; i < tree_links_.size(); ++i) {
    all_tree_.push_back(static_cast<int>(i));
    tree_at_[static_cast<std::size_t>(tree_links_[i].child_depth)].push_back(static_cast<int>(i));
  }

  // Halo cells of local grids not covered by an incoming link.
  unlinked_.assign(grids.size(), {});
  std::vector<std::vector<char>> covered(grids.size(), std::vector<char>(L.padded(), 0));
  for (const auto& l : halo_links_) {
    if (l.dst_local < 0) continue;
    for (auto i : l.dst_idx) covered[static_cast<std::size_t>(l.dst_local)][static_cast<std::size_t>(i)] = 1;
  }
  for (std::size_t g = 0; g < grids.size(); ++g) {
    for (int k = -1; k <= s[2]; ++k) {
      for (int j = -1; j <= s[1]; ++j) {
        for (int i = -1; i <= s[0]; ++i) {
          const bool interior = i >= 0 && i < s[0] && j >= 0 && j < s[1] && k >= 0 && k < s[2];
          const auto p = L.idx(i, j, k);
          if (interior || covered[g][static_cast<std::size_t>(p)]) continue;
          const auto q = L.idx(std::clamp(i, 0, s[0] - 1), std::clamp(j, 0, s[1] - 1), std::clamp(k, 0, s[2] - 1));
          unlinked_[g].emplace_back(static_cast<std::int32_t>(p), static_cast<std::int32_t>(q));
        }
      }
    }
  }
}

template <class Link, class Select, class Pack, class Unpack>
void Exchanger::round(Communicator& c, const std::vector<Link>& links, const std::vector<int>& which,
                      Select select, bool src_is_first, Pack pack, Unpack unpack) {
  // src_is_first: the sending side of a tree link is the child (restriction)
  // when true, the parent (injection) when false. Halo links always send from src.
  const auto tag = ++tag_;
  const int nranks = c.size();
  const auto sender = [&](const Link& l) {
    if constexpr (std::is_same_v<Link, HaloLink>) {
      return l.src_rank;
    } else {
      return src_is_first ? l.child_rank : l.parent_rank;
    }
  };
  const auto receiver = [&](const Link& l) {
    if constexpr (std::is_same_v<Link, HaloLink>) {
      return l.dst_rank;
    } else {
      return src_is_first ? l.parent_rank : l.child_rank;
    }
  };
  std::vector<std::vector<double>> out;
  std::vector<char> expect;
  if (nranks > 1) {
    out.resize(static_cast<std::size_t>(nranks));
    expect.assign(static_cast<std::size_t>(nranks), 0);
  }
  for (const int i : which) {
    const auto& l = links[static_cast<std::size_t>(i)];
    if (!select(l)) continue;
    const int from = sender(l);
    const int to = receiver(l);
    if (from == rank_ && to == rank_) {
      scratch_.clear();
      pack(l, scratch_);
      const double* in = scratch_.data();
      unpack(l, in);
    } else if (from == rank_) {
      pack(l, out[static_cast<std::size_t>(to)]);
    } else if (to == rank_) {
      expect[static_cast<std::size_t>(from)] = 1;
    }
  }
  if (nranks == 1) return;
  for (int r = 0; r < nranks; ++r) {
    auto& buf = out[static_cast<std::size_t>(r)];
    if (!buf.empty()) c.send(r, tag, std::move(buf));
  }
  for (int r = 0; r < nranks; ++r) {
    if (!expect[static_cast<std::size_t>(r)]) continue;
    auto msg = c.recv(r, tag);
    const auto data = std::any_cast<std::vector<double>>(std::move(msg.payload));
    const double* in = data.data();
    for (const int i : which) {
      const auto& l = links[static_cast<std::size_t>(i)];
      if (select(l) && sender(l) == r && receiver(l) == rank_) unpack(l, in);
    }
  }
}

const std::vector<int>& Exchanger::trees_at(int child_depth) const {
  static const std::vector<int> none;
  if (child_depth < 0 || child_depth > deepest_) return none;
  return tree_at_[static_cast<std::size_t>(child_depth)];
}

void Exchanger::restrict_level(Communicator& c, std::vector<DGrid>& grids, int child_depth,
                               std::span<const Channel> ch, bool internal_only) {
  const double inv = 1.0 / group_;
  round(
      c, tree_links_, trees_at(child_depth), [&](const TreeLink& t) { return !internal_only || !t.child_leaf; },
      true,
      [&](const TreeLink& t, std::vector<double>& out) {
        auto& g = grids[static_cast<std::size_t>(t.child_local)];
        for (const Channel k : ch) {
          const auto v = channel_data(g, k);
          for (std::size_t b = 0; b < t.child_groups.size(); b += static_cast<std::size_t>(group_)) {
            double sum = 0.0;
            for (int m = 0; m < group_; ++m) sum += v[static_cast<std::size_t>(t.child_groups[b + m])];
            out.push_back(sum * inv);
          }
        }
      },
      [&](const TreeLink& t, const double*& in) {
        auto& g = grids[static_cast<std::size_t>(t.parent_local)];
        for (const Channel k : ch) {
          const auto v = channel_data(g, k);
          for (const auto p : t.parent_block) v[static_cast<std::size_t>(p)] = *in++;
        }
      });
}

void Exchanger::restrict_all(Communicator& c, std::vector<DGrid>& grids, std::span<const Channel> ch) {
  for (int d = deepest_; d >= 1; --d) restrict_level(c, grids, d, ch);
}

void Exchanger::prolong_add(Communicator& c, std::vector<DGrid>& grids, int child_depth, Channel ch,
                            bool internal_only) {
  halo(c, grids, std::span<const Channel>(&ch, 1), Phase::kBoth, child_depth - 1);
  fill_unlinked(grids, std::span<const Channel>(&ch, 1), child_depth - 1);
  // Per child position: offset of its centre from the parent centre, in parent cells.
  std::vector<std::array<double, 3>> delta;
  for (int cz = 0; cz < r_[2]; ++cz) {
    for (int cy = 0; cy < r_[1]; ++cy) {
      for (int cx = 0; cx < r_[0]; ++cx) {
        const int cpos[3] = {cx, cy, cz};
        std::array<double, 3> dl{};
        for (int a = 0; a < 3; ++a) dl[static_cast<std::size_t>(a)] = (cpos[a] + 0.5) / r_[a] - 0.5;
        delta.push_back(dl);
      }
    }
  }
  round(
      c, tree_links_, trees_at(child_depth), [&](const TreeLink& t) { return !internal_only || !t.child_leaf; },
      false,
      [&](const TreeLink& t, std::vector<double>& out) {
        auto& g = grids[static_cast<std::size_t>(t.parent_local)];
        const auto v = channel_data(g, ch);
        for (const auto p : t.parent_block) {
          const double own = v[static_cast<std::size_t>(p)];
          for (const auto& dl : delta) {
            double x = own;
            for (int a = 0; a < 3; ++a) {
              const double w = dl[static_cast<std::size_t>(a)];
              if (w == 0.0) continue;
              const auto q = p + (w > 0 ? 1 : -1) * g.layout().stride(a);
              const CellCode nc = g.code(q);
              const double nb = spacetree::is_fluid(nc)      ? v[static_cast<std::size_t>(q)]
                                : nc == CellCode::kOutflow ? 0.0
                                                           : own;
              x += std::abs(w) * (nb - own);
            }
            out.push_back(x);
          }
        }
      },
      [&](const TreeLink& t, const double*& in) {
        const auto v = channel_data(grids[static_cast<std::size_t>(t.child_local)], ch);
        for (const auto q : t.child_groups) v[static_cast<std::size_t>(q)] += *in++;
      });
}

void Exchanger::inject_parity(Communicator& c, std::vector<DGrid>& grids, Channel from, Channel to, int m) {
  round(
      c, tree_links_, all_tree_, [](const TreeLink& t) { return t.child_leaf; }, true,
      [&](const TreeLink& t, std::vector<double>& out) {
        const auto v = channel_data(grids[static_cast<std::size_t>(t.child_local)], from);
        for (std::size_t b = 0; b < t.child_groups.size(); b += static_cast<std::size_t>(group_)) {
          out.push_back(v[static_cast<std::size_t>(t.child_groups[b + static_cast<std::size_t>(m)])]);
        }
      },
      [&](const TreeLink& t, const double*& in) {
        const auto v = channel_data(grids[static_cast<std::size_t>(t.parent_local)], to);
        for (const auto p : t.parent_block) v[static_cast<std::size_t>(p)] = *in++;
      });
}

void Exchanger::prolong_parity(Communicator& c, std::vector<DGrid>& grids, Channel from, Channel to, int m) {
  round(
      c, tree_links_, all_tree_, [](const TreeLink& t) { return t.child_leaf; }, false,
      [&](const TreeLink& t, std::vector<double>& out) {
        const auto v = channel_data(grids[static_cast<std::size_t>(t.parent_local)], from);
        for (const auto p : t.parent_block) out.push_back(v[static_cast<std::size_t>(p)]);
      },
      [&](const TreeLink& t, const double*& in) {
        const auto v = channel_data(grids[static_cast<std::size_t>(t.child_local)], to);
        for (std::size_t b = 0; b < t.child_groups.size(); b += static_cast<std::size_t>(group_)) {
          v[static_cast<std::size_t>(t.child_groups[b + static_cast<std::size_t>(m)])] = *in++;
        }
      });
}

void Exchanger::halo(Communicator& c, std::vector<DGrid>& grids, std::span<const Channel> ch, Phase phase,
                     int dst_depth) {
  const auto select = [&](const HaloLink& l) {
    if (phase == Phase::kHorizontal) return l.delta == 0;
    if (phase == Phase::kTopDown) return l.delta < 0;
    return true;
  };
  static const std::vector<int> none;
  const auto& which = dst_depth < 0 ? all_halo_
                      : dst_depth > deepest_ ? none
                                             : halo_at_[static_cast<std::size_t>(dst_depth)];
  round(
      c, halo_links_, which, select, true,
      [&](const HaloLink& l, std::vector<double>& out) {
        auto& g = grids[static_cast<std::size_t>(l.src_local)];
        for (const Channel k : ch) {
          const auto v = channel_data(g, k);
          for (const auto p : l.src_idx) out.push_back(v[static_cast<std::size_t>(p)]);
        }
      },
      [&](const HaloLink& l, const double*& in) {
        auto& g = grids[static_cast<std::size_t>(l.dst_local)];
        for (const Channel k : ch) {
          const auto v = channel_data(g, k);
          for (const auto p : l.dst_idx) v[static_cast<std::size_t>(p)] = *in++;
        }
      });
}

void Exchanger::fill_unlinked(std::vector<DGrid>& grids, std::span<const Channel> ch, int depth) const {
  for (std::size_t g = 0; g < grids.size(); ++g) {
    if (depth >= 0 && grids[g].depth() != depth) continue;
    for (const Channel k : ch) {
      const auto v = channel_data(grids[g], k);
      for (const auto& [p, q] : unlinked_[g]) v[static_cast<std::size_t>(p)] = v[static_cast<std::size_t>(q)];
    }
  }
}

void Exchanger::ghost_update(Communicator& c, std::vector<DGrid>& grids, std::span<const Channel> ch) {
  restrict_all(c, grids, ch);
  halo(c, grids, ch, Phase::kHorizontal);
  halo(c, grids, ch, Phase::kTopDown);
  fill_unlinked(grids, ch);
}

void Exchanger::update_codes(Communicator& c, std::vector<DGrid>& grids) {
  for (int d = deepest_; d >= 1; --d) {
    round(
        c, tree_links_, trees_at(d), [](const TreeLink&) { return true; }, true,
        [&](const TreeLink& t, std::vector<double>& out) {
          const auto& g = grids[static_cast<std::size_t>(t.child_local)];
          for (std::size_t b = 0; b < t.child_groups.size(); b += static_cast<std::size_t>(group_)) {
            auto best = t.child_groups[b];
            for (int m = 1; m < group_; ++m) {
              const auto q = t.child_groups[b + m];
              if (code_priority(g.code(q)) > code_priority(g.code(best))) best = q;
            }
            const auto bc = g.params(g.layout().linear(best)).value_or(BcParams{});
            out.push_back(static_cast<double>(g.code(best)));
            out.insert(out.end(), {bc.velocity[0], bc.velocity[1], bc.velocity[2], bc.temperature});
          }
        },
        [&](const TreeLink& t, const double*& in) {
          auto& g = grids[static_cast<std::size_t>(t.parent_local)];
          for (const auto p : t.parent_block) {
            const auto code = static_cast<CellCode>(static_cast<int>(in[0]));
            const BcParams bc{{in[1], in[2], in[3]}, in[4]};
            in += 5;
            g.set_cell_type(g.layout().linear(p), code,
                            spacetree::needs_params(code) ? std::optional(bc) : std::nullopt);
          }
        });
  }
  for (auto& g : grids) g.compact_params();
  round(
      c, halo_links_, all_halo_, [](const HaloLink&) { return true; }, true,
      [&](const HaloLink& l, std::vector<double>& out) {
        const auto& g = grids[static_cast<std::size_t>(l.src_local)];
        for (const auto p : l.src_idx) out.push_back(static_cast<double>(g.code(p)));
      },
      [&](const HaloLink& l, const double*& in) {
        auto& g = grids[static_cast<std::size_t>(l.dst_local)];
        for (const auto p : l.dst_idx) g.set_halo_code(p, static_cast<CellCode>(static_cast<int>(*in++)));
      });
  for (std::size_t g = 0; g < grids.size(); ++g) {
    for (const auto& [p, q] : unlinked_[g]) grids[g].set_halo_code(p, CellCode::kWallNoSlip);
  }
}

}  // namespace trsflow::solver
