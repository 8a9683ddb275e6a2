#include "trsflow/solver/poisson.hpp"

#include <cmath>
#include <limits>

#include "trsflow/solver/kernels.hpp"

namespace trsflow::solver {

namespace {

Channel work(int w) { return {Buf::kWork, w}; }

// f(grid, fluid interior padded indices) for every local leaf.
template <class F>
void for_leaf(RankDomain& d, F&& f) {
  for (std::size_t i = 0; i < d.grids.size(); ++i) {
    if (d.is_leaf(i)) f(d.grids[i], d.fluid_index[i]);
  }
}

// y = a*x + b*y over fluid leaf cells.
void axpby(RankDomain& d, double a, Channel x, double b, Channel y) {
  for_leaf(d, [&](DGrid& g, const std::vector<std::int32_t>& idx) {
    const auto xs = channel_data(g, x);
    const auto ys = channel_data(g, y);
    for (const auto p : idx) ys[static_cast<std::size_t>(p)] = a * xs[static_cast<std::size_t>(p)] + b * ys[static_cast<std::size_t>(p)];
  });
}

void copy(RankDomain& d, Channel from, Channel to) {
  for_leaf(d, [&](DGrid& g, const std::vector<std::int32_t>& idx) {
    const auto xs = channel_data(g, from);
    const auto ys = channel_data(g, to);
    for (const auto p : idx) ys[static_cast<std::size_t>(p)] = xs[static_cast<std::size_t>(p)];
  });
}

double mean(Communicator& c, RankDomain& d, Channel x) {
  double s = 0.0;
  for_leaf(d, [&](DGrid& g, const std::vector<std::int32_t>& idx) {
    const auto xs = channel_data(g, x);
    for (const auto p : idx) s += xs[static_cast<std::size_t>(p)];
  });
  const auto n = fluid_cells(c, d);
  return n > 0 ? c.allreduce_sum(s) / static_cast<double>(n) : 0.0;
}

void shift(RankDomain& d, Channel x, double by) {
  for_leaf(d, [&](DGrid& g, const std::vector<std::int32_t>& idx) {
    const auto xs = channel_data(g, x);
    for (const auto p : idx) xs[static_cast<std::size_t>(p)] -= by;
  });
}

// Grids taking part in a multigrid level: all grids at `depth`, or only the
// interior ones when the leaves are handled by parity injection.
bool on_level(const RankDomain& d, std::size_t i, int depth, bool internal) {
  return d.grids[i].depth() == depth && !(internal && d.is_leaf(i));
}

void smooth(Communicator& c, RankDomain& d, int depth, int sweeps, bool internal) {
  const Channel z = work(kMgZ);
  for (int n = 0; n < sweeps; ++n) {
    d.ex.halo(c, d.grids, std::span<const Channel>(&z, 1), Exchanger::Phase::kBoth, depth);
    for (std::size_t i = 0; i < d.grids.size(); ++i) {
      if (!on_level(d, i, depth, internal)) continue;
      auto& g = d.grids[i];
      jacobi_sweep(g, g.work(kMgZ), g.work(kMgB), g.work(kMgRes), d.params.omega, d.dims());
    }
  }
}

void zero_mg(RankDomain& d) {
  for (auto& g : d.grids) {
    std::fill(g.work(kMgZ).begin(), g.work(kMgZ).end(), 0.0);
    std::fill(g.work(kMgB).begin(), g.work(kMgB).end(), 0.0);
  }
}

// V-cycle from level `top` down to the root with MgB already filled on the
// grids of every level; leaves the correction in MgZ. In `internal` mode the
// cells of a parent covered by leaf children keep their MgB and only the
// blocks under interior children receive the restricted residual.
void cycle(Communicator& c, RankDomain& d, int top, bool internal) {
  const SolverParams& sp = d.params;
  const Channel res = work(kMgRes);
  const Channel z = work(kMgZ);
  for (int level = top; level >= 0; --level) {
    if (level == 0) {
      smooth(c, d, 0, std::max(sp.coarse_sweeps, sp.nu1 << top), internal);
      break;
    }
    smooth(c, d, level, sp.nu1 << (top - level), internal);
    d.ex.halo(c, d.grids, std::span<const Channel>(&z, 1), Exchanger::Phase::kBoth, level);
    for (std::size_t i = 0; i < d.grids.size(); ++i) {
      auto& g = d.grids[i];
      if (on_level(d, i, level, internal)) compact_residual(g, g.work(kMgZ), g.work(kMgB), g.work(kMgRes), d.dims());
      if (internal && g.depth() == level - 1 && !d.is_leaf(i)) {
        std::copy(g.work(kMgB).begin(), g.work(kMgB).end(), g.work(kMgRes).begin());
      }
    }
    d.ex.restrict_level(c, d.grids, level, std::span<const Channel>(&res, 1), internal);
    for (std::size_t i = 0; i < d.grids.size(); ++i) {
      auto& g = d.grids[i];
      if (g.depth() != level - 1 || d.is_leaf(i)) continue;
      std::copy(g.work(kMgRes).begin(), g.work(kMgRes).end(), g.work(kMgB).begin());
    }
  }
  for (int level = 1; level <= top; ++level) {
    d.ex.prolong_add(c, d.grids, level, z, internal);
    smooth(c, d, level, sp.nu2 << (top - level), internal);
  }
}

// out = 0 on the non-fluid cells of leaves.
void mask(RankDomain& d, Channel out) {
  for (std::size_t i = 0; i < d.grids.size(); ++i) {
    if (!d.is_leaf(i)) continue;
    auto& g = d.grids[i];
    auto o = channel_data(g, out);
    for (std::int64_t lin = 0; lin < g.cells(); ++lin) {
      const auto p = g.layout().interior(lin);
      if (!spacetree::is_fluid(g.code(p))) o[static_cast<std::size_t>(p)] = 0.0;
    }
  }
}

void load_leaves(RankDomain& d, Channel in) {
  for_leaf(d, [&](DGrid& g, const std::vector<std::int32_t>& idx) {
    const auto b = g.work(kMgB);
    const auto xs = channel_data(g, in);
    for (const auto p : idx) b[static_cast<std::size_t>(p)] = xs[static_cast<std::size_t>(p)];
  });
}

}  // namespace

double dot(Communicator& c, RankDomain& d, Channel a, Channel b) {
  double s = 0.0;
  for_leaf(d, [&](DGrid& g, const std::vector<std::int32_t>& idx) {
    const auto as = channel_data(g, a);
    const auto bs = channel_data(g, b);
    for (const auto p : idx) s += as[static_cast<std::size_t>(p)] * bs[static_cast<std::size_t>(p)];
  });
  return c.allreduce_sum(s);
}

std::int64_t fluid_cells(Communicator& c, const RankDomain& d) {
  std::int64_t n = 0;
  for (std::size_t i = 0; i < d.grids.size(); ++i) {
    if (d.is_leaf(i)) n += static_cast<std::int64_t>(d.fluid_index[i].size());
  }
  return c.allreduce_sum(n);
}

void apply_pressure_operator(Communicator& c, RankDomain& d, Channel in, Channel out) {
  d.ex.ghost_update(c, d.grids, std::span<const Channel>(&in, 1));
  for (std::size_t i = 0; i < d.grids.size(); ++i) {
    if (!d.is_leaf(i)) continue;
    auto& g = d.grids[i];
    gradient(g, channel_data(g, in), {g.work(kGx), g.work(kGy), g.work(kGz)}, d.dims());
  }
  const Channel grad[3] = {work(kGx), work(kGy), work(kGz)};
  d.ex.ghost_update(c, d.grids, std::span<const Channel>(grad, static_cast<std::size_t>(d.dims())));
  for (std::size_t i = 0; i < d.grids.size(); ++i) {
    if (!d.is_leaf(i)) continue;
    auto& g = d.grids[i];
    divergence(g, {g.work(kGx), g.work(kGy), g.work(kGz)}, channel_data(g, out), d.dims());
  }
  if (d.pin_grid >= 0) {
    auto& g = d.grids[static_cast<std::size_t>(d.pin_grid)];
    const Vec3 h = cell_size(g);
    double diag = 0.0;
    for (int a = 0; a < d.dims(); ++a) diag -= 2.0 / (h[a] * h[a]);
    const auto p = static_cast<std::size_t>(d.pin_cell);
    channel_data(g, out)[p] = diag * channel_data(g, in)[p];
  }
}

void vcycle(Communicator& c, RankDomain& d, Channel in, Channel out) {
  zero_mg(d);
  load_leaves(d, in);
  cycle(c, d, d.deepest, false);
  for (std::size_t i = 0; i < d.grids.size(); ++i) {
    if (!d.is_leaf(i)) continue;
    auto& g = d.grids[i];
    const auto o = channel_data(g, out);
    const auto z = g.work(kMgZ);
    std::copy(z.begin(), z.end(), o.begin());
  }
  mask(d, out);
}

void parity_precondition(Communicator& c, RankDomain& d, Channel in, Channel out) {
  if (d.deepest == 0) {
    vcycle(c, d, in, out);
    return;
  }
  const Channel b = work(kMgB);
  const Channel z = work(kMgZ);
  for (int m = 0; m < d.ex.group(); ++m) {
    zero_mg(d);
    load_leaves(d, in);
    d.ex.inject_parity(c, d.grids, b, b, m);
    cycle(c, d, d.deepest - 1, true);
    // Fluid leaf cells under a boundary parent have no subgrid row; they get
    // a NaN marker here and a diagonal scaling below.
    for (std::size_t i = 0; i < d.grids.size(); ++i) {
      if (d.is_leaf(i)) continue;
      auto& g = d.grids[i];
      const auto zs = g.work(kMgZ);
      for (std::int64_t lin = 0; lin < g.cells(); ++lin) {
        const auto p = g.layout().interior(lin);
        if (!spacetree::is_fluid(g.code(p))) zs[static_cast<std::size_t>(p)] = std::numeric_limits<double>::quiet_NaN();
      }
    }
    d.ex.prolong_parity(c, d.grids, z, out, m);
  }
  for_leaf(d, [&](DGrid& g, const std::vector<std::int32_t>& idx) {
    const Vec3 h = cell_size(g);
    double diag = 0.0;
    for (int a = 0; a < d.dims(); ++a) diag -= 0.5 / (h[a] * h[a]);
    const auto o = channel_data(g, out);
    const auto xs = channel_data(g, in);
    for (const auto p : idx) {
      const auto up = static_cast<std::size_t>(p);
      if (std::isnan(o[up])) o[up] = xs[up] / diag;
    }
  });
  mask(d, out);
  // The parity split ignores the coupling of the classes in boundary rows;
  // a few Jacobi sweeps with the full operator pick it up.
  for (int k = 0; k < d.params.wide_sweeps; ++k) {
    apply_pressure_operator(c, d, out, work(kAs));
    for_leaf(d, [&](DGrid& g, const std::vector<std::int32_t>& idx) {
      const Vec3 h = cell_size(g);
      double diag = 0.0;
      for (int a = 0; a < d.dims(); ++a) diag -= 0.5 / (h[a] * h[a]);
      const auto o = channel_data(g, out);
      const auto xs = channel_data(g, in);
      const auto ao = g.work(kAs);
      for (const auto p : idx) {
        const auto up = static_cast<std::size_t>(p);
        o[up] += (xs[up] - ao[up]) / diag;
      }
    });
  }
}

PoissonStats solve_pressure(Communicator& c, RankDomain& d, Channel x, Channel b) {
  PoissonStats st;
  const SolverParams& sp = d.params;
  const auto precondition = sp.parity ? parity_precondition : vcycle;
  if (!d.has_outflow) {
    shift(d, b, mean(c, d, b));
    if (d.pin_grid >= 0) channel_data(d.grids[static_cast<std::size_t>(d.pin_grid)], b)[static_cast<std::size_t>(d.pin_cell)] = 0.0;
  }
  st.rhs_norm = std::sqrt(dot(c, d, b, b));
  if (st.rhs_norm == 0.0) {
    for_leaf(d, [&](DGrid& g, const std::vector<std::int32_t>& idx) {
      const auto xs = channel_data(g, x);
      for (const auto p : idx) xs[static_cast<std::size_t>(p)] = 0.0;
    });
    return st;
  }
  const double tol = sp.eps_mg * st.rhs_norm;
  const Channel r = work(kR), rhat = work(kRhat), pd = work(kPdir), v = work(kAp), y = work(kY), s = work(kS),
                t = work(kAs);

  // r = b - A x
  apply_pressure_operator(c, d, x, r);
  axpby(d, 1.0, b, -1.0, r);
  double rnorm = std::sqrt(dot(c, d, r, r));
  bool restart = true;
  double rho = 1.0, alpha = 1.0, omega = 1.0;
  while (rnorm > tol) {
    if (restart) {
      copy(d, r, rhat);
      copy(d, r, pd);
      rho = dot(c, d, rhat, r);
      restart = false;
    } else {
      const double rho_new = dot(c, d, rhat, r);
      if (rho_new == 0.0 || omega == 0.0) {
        restart = true;
        continue;
      }
      const double beta = (rho_new / rho) * (alpha / omega);
      rho = rho_new;
      // p = r + beta (p - omega v)
      axpby(d, -omega, v, 1.0, pd);
      axpby(d, 1.0, r, beta, pd);
    }
    if (st.cycles + 2 > sp.max_cycles) break;
    precondition(c, d, pd, y);
    ++st.cycles;
    apply_pressure_operator(c, d, y, v);
    const double rv = dot(c, d, rhat, v);
    if (rv == 0.0) {
      restart = true;
      continue;
    }
    alpha = rho / rv;
    copy(d, r, s);
    axpby(d, -alpha, v, 1.0, s);
    axpby(d, alpha, y, 1.0, x);
    const double snorm = std::sqrt(dot(c, d, s, s));
    if (snorm <= tol) {
      copy(d, s, r);
      rnorm = snorm;
      break;
    }
    precondition(c, d, s, y);
    ++st.cycles;
    apply_pressure_operator(c, d, y, t);
    const double tt = dot(c, d, t, t);
    omega = tt > 0.0 ? dot(c, d, t, s) / tt : 0.0;
    axpby(d, omega, y, 1.0, x);
    copy(d, s, r);
    axpby(d, -omega, t, 1.0, r);
    rnorm = std::sqrt(dot(c, d, r, r));
  }
  st.residual = rnorm;
  if (rnorm > tol) {
    throw ConvergenceError("pressure solve did not converge in " + std::to_string(st.cycles) + " cycles (residual " +
                               std::to_string(rnorm / st.rhs_norm) + " relative)",
                           rnorm);
  }
  if (!d.has_outflow) shift(d, x, mean(c, d, x));
  return st;
}

}  // namespace trsflow::solver
