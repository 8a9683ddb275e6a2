#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "trsflow/solver/kernels.hpp"
#include "trsflow/solver/simulation.hpp"

using namespace trsflow::solver;
using trsflow::spacetree::Index3;
using trsflow::spacetree::RefineRegion;

namespace {

constexpr int kU = 0, kV = 1, kP = 3, kT = 4;

DomainSetup setup_2d(Index3 s, int depth, double lx = 1.0, double ly = 1.0) {
  DomainSetup st;
  st.geom.r = {2, 2, 1};
  st.geom.s = s;
  st.geom.max_depth = std::max(depth, 0);
  const double hz = lx / (s[0] << depth);
  st.geom.domain = Box{{0, 0, 0}, {lx, ly, hz}};
  if (depth > 0) st.refine.push_back({st.geom.domain, depth});
  st.fluid.mu = 0.0;
  return st;
}

DomainSetup setup_3d(int n, int depth) {
  DomainSetup st;
  st.geom.r = {2, 2, 2};
  st.geom.s = {n, n, n};
  st.geom.max_depth = depth;
  st.geom.domain = Box{{0, 0, 0}, {1, 1, 1}};
  if (depth > 0) st.refine.push_back({st.geom.domain, depth});
  st.fluid.mu = 0.0;
  return st;
}

BoundaryObject face(int f, CellCode code, Vec3 vel = {0, 0, 0}, double T = 293.15) {
  BoundaryObject o;
  o.id = "face" + std::to_string(f);
  o.shape.kind = ShapeKind::kFace;
  o.shape.face = f;
  o.code = code;
  o.params.velocity = vel;
  o.params.temperature = T;
  return o;
}

template <class F>
void for_leaf_cells(Simulation& sim, F&& f) {
  for (int r = 0; r < sim.ranks(); ++r) {
    auto& d = sim.domain(r);
    for (std::size_t i = 0; i < d.grids.size(); ++i) {
      if (!d.is_leaf(i)) continue;
      auto& g = d.grids[i];
      const auto& s = g.layout().s();
      for (int k = 0; k < s[2]; ++k) {
        for (int j = 0; j < s[1]; ++j) {
          for (int ii = 0; ii < s[0]; ++ii) f(g, ii, j, k, g.layout().idx(ii, j, k));
        }
      }
    }
  }
}

// Independent dense operator on a single padded block: halos are no-slip
// walls, interior codes as given.
struct Block {
  Index3 n;
  Vec3 h;
  int dims;
  std::vector<CellCode> code;

  int id(int i, int j, int k) const { return (i + 1) + (n[0] + 2) * ((j + 1) + (n[1] + 2) * (k + 1)); }
  int padded() const { return (n[0] + 2) * (n[1] + 2) * (n[2] + 2); }
  int step(int a) const { return a == 0 ? 1 : a == 1 ? n[0] + 2 : (n[0] + 2) * (n[1] + 2); }
  bool fluid(int c) const { return code[static_cast<std::size_t>(c)] == CellCode::kFluid; }

  std::vector<double> apply(const std::vector<double>& p) const {
    std::vector<std::array<double, 3>> G(static_cast<std::size_t>(padded()), {0, 0, 0});
    const auto pface = [&](int c, int nb) {
      const auto cn = code[static_cast<std::size_t>(nb)];
      if (cn == CellCode::kFluid) return 0.5 * (p[c] + p[nb]);
      if (cn == CellCode::kOutflow) return 0.0;
      return p[c];
    };
    const auto uface = [&](int c, int nb, int a) {
      const auto cn = code[static_cast<std::size_t>(nb)];
      if (cn == CellCode::kFluid) return 0.5 * (G[c][a] + G[nb][a]);
      if (cn == CellCode::kOutflow) return G[c][a];
      if (cn == CellCode::kInflow) return G[nb][a];
      return 0.0;
    };
    for (int k = 0; k < n[2]; ++k)
      for (int j = 0; j < n[1]; ++j)
        for (int i = 0; i < n[0]; ++i) {
          const int c = id(i, j, k);
          if (!fluid(c)) continue;
          for (int a = 0; a < dims; ++a) G[c][a] = (pface(c, c + step(a)) - pface(c, c - step(a))) / h[a];
        }
    std::vector<double> out(static_cast<std::size_t>(padded()), 0.0);
    for (int k = 0; k < n[2]; ++k)
      for (int j = 0; j < n[1]; ++j)
        for (int i = 0; i < n[0]; ++i) {
          const int c = id(i, j, k);
          if (!fluid(c)) continue;
          double s = 0.0;
          for (int a = 0; a < dims; ++a) s += (uface(c, c + step(a), a) - uface(c, c - step(a), a)) / h[a];
          out[c] = s;
        }
    return out;
  }
};

Block block_of(const DGrid& g, int dims) {
  Block b;
  b.n = g.layout().s();
  b.h = cell_size(g);
  b.dims = dims;
  b.code.assign(static_cast<std::size_t>(b.padded()), CellCode::kWallNoSlip);
  for (int k = 0; k < b.n[2]; ++k)
    for (int j = 0; j < b.n[1]; ++j)
      for (int i = 0; i < b.n[0]; ++i) b.code[static_cast<std::size_t>(b.id(i, j, k))] = g.code(g.layout().idx(i, j, k));
  return b;
}

// Dense solve of the block operator restricted to fluid cells.
Eigen::VectorXd dense_solve(const Block& b, const std::vector<int>& cells, const Eigen::VectorXd& rhs, bool singular) {
  const auto m = static_cast<Eigen::Index>(cells.size());
  Eigen::MatrixXd A(m, m);
  for (Eigen::Index col = 0; col < m; ++col) {
    std::vector<double> e(static_cast<std::size_t>(b.padded()), 0.0);
    e[static_cast<std::size_t>(cells[static_cast<std::size_t>(col)])] = 1.0;
    const auto Ae = b.apply(e);
    for (Eigen::Index row = 0; row < m; ++row) A(row, col) = Ae[static_cast<std::size_t>(cells[static_cast<std::size_t>(row)])];
  }
  if (!singular) return A.partialPivLu().solve(rhs);
  Eigen::VectorXd x = A.completeOrthogonalDecomposition().solve(rhs);
  return x.array() - x.mean();
}

double rel_l2(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return (a - b).norm() / b.norm(); }

// Runs one Poisson solve on a single-grid domain against the dense oracle.
void check_single_grid_poisson(DomainSetup st, bool singular, unsigned seed) {
  st.params.eps_mg = 1e-10;
  st.params.max_cycles = 4000;
  Simulation sim(st, 1);
  auto& d = sim.domain(0);
  REQUIRE(d.grids.size() == 1);
  auto& g = d.grids[0];
  const Block blk = block_of(g, d.dims());
  std::vector<int> cells;
  for (int k = 0; k < blk.n[2]; ++k)
    for (int j = 0; j < blk.n[1]; ++j)
      for (int i = 0; i < blk.n[0]; ++i)
        if (blk.fluid(blk.id(i, j, k))) cells.push_back(blk.id(i, j, k));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-1, 1);
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(cells.size()));
  for (auto& v : rhs) v = U(rng);
  if (singular) rhs.array() -= rhs.mean();
  for (std::size_t m = 0; m < cells.size(); ++m) g.temp.at(kP, cells[m]) = rhs[static_cast<Eigen::Index>(m)];
  PoissonStats st_out;
  sim.spmd([&](Communicator& c, RankDomain& dd) {
    st_out = solve_pressure(c, dd, {Buf::kPrevious, kP}, {Buf::kTemp, kP});
  });
  Eigen::VectorXd x(rhs.size());
  for (std::size_t m = 0; m < cells.size(); ++m) x[static_cast<Eigen::Index>(m)] = g.previous.at(kP, cells[m]);
  const Eigen::VectorXd ref = dense_solve(blk, cells, rhs, singular);
  MESSAGE("V-cycles " << st_out.cycles << ", rel err " << rel_l2(x, ref));
  CHECK(rel_l2(x, ref) < 1e-6);
}

}  // namespace

TEST_CASE("ghost update preserves a constant field including halos") {
  for (int ranks : {1, 2, 3}) {
    auto st = setup_2d({4, 4, 1}, 2);
    st.refine.push_back({Box{{0, 0, 0}, {0.3, 0.3, 1}}, 3});
    st.geom.max_depth = 3;
    st.u0 = {2.5, 2.5, 2.5};
    Simulation sim(st, ranks);
    sim.spmd([&](Communicator& c, RankDomain& d) {
      for (auto& g : d.grids) {
        auto f = g.current.field(kU);
        std::fill(f.begin(), f.end(), -7.0);  // halos and interior grids get overwritten
        const auto& L = g.layout();
        for (std::int64_t lin = 0; lin < L.cells(); ++lin) f[static_cast<std::size_t>(L.interior(lin))] = 2.5;
      }
      const Channel ch{Buf::kCurrent, kU};
      d.ex.ghost_update(c, d.grids, std::span<const Channel>(&ch, 1));
    });
    for (int r = 0; r < ranks; ++r) {
      for (auto& g : sim.domain(r).grids) {
        for (const double v : g.current.field(kU)) REQUIRE(v == 2.5);
      }
    }
  }
}

TEST_CASE("ghost update between two side-by-side grids copies boundary layers") {
  DomainSetup st;
  st.geom.r = {2, 1, 1};
  st.geom.s = {4, 4, 1};
  st.geom.max_depth = 1;
  st.geom.domain = Box{{0, 0, 0}, {2, 1, 0.25}};
  st.refine.push_back({st.geom.domain, 1});
  for (int ranks : {1, 2, 3}) {
    Simulation sim(st, ranks);
    sim.spmd([&](Communicator& c, RankDomain& d) {
      for (std::size_t i = 0; i < d.grids.size(); ++i) {
        auto& g = d.grids[i];
        if (!d.is_leaf(i)) continue;
        const double v = g.bbox().lo[0] < 0.5 ? 1.0 : 3.0;
        auto f = g.current.field(kT);
        std::fill(f.begin(), f.end(), v);
      }
      const Channel ch{Buf::kCurrent, kT};
      d.ex.ghost_update(c, d.grids, std::span<const Channel>(&ch, 1));
    });
    for (int r = 0; r < ranks; ++r) {
      auto& d = sim.domain(r);
      for (std::size_t i = 0; i < d.grids.size(); ++i) {
        if (!d.is_leaf(i)) continue;
        auto& g = d.grids[i];
        const bool left = g.bbox().lo[0] < 0.5;
        for (int j = 0; j < 4; ++j) {
          if (left) {
            CHECK(g.current.at(kT, g.layout().idx(4, j, 0)) == 3.0);
          } else {
            CHECK(g.current.at(kT, g.layout().idx(-1, j, 0)) == 1.0);
          }
        }
      }
    }
  }
}

TEST_CASE("bottom-up restriction of four uniform children") {
  auto st = setup_2d({2, 2, 1}, 1);
  Simulation sim(st, 2);
  sim.spmd([&](Communicator& c, RankDomain& d) {
    for (std::size_t i = 0; i < d.grids.size(); ++i) {
      if (!d.is_leaf(i)) continue;
      auto& g = d.grids[i];
      const int child = g.location().digit(1);
      auto f = g.current.field(kT);
      std::fill(f.begin(), f.end(), 1.0 + child);
    }
    const Channel ch{Buf::kCurrent, kT};
    d.ex.restrict_all(c, d.grids, std::span<const Channel>(&ch, 1));
  });
  auto& root = sim.domain(0).grids[0];
  REQUIRE(root.depth() == 0);
  // Parent cell (i, j) is covered by child i + 2j alone.
  CHECK(root.current.at(kT, root.layout().idx(0, 0, 0)) == 1.0);
  CHECK(root.current.at(kT, root.layout().idx(1, 0, 0)) == 2.0);
  CHECK(root.current.at(kT, root.layout().idx(0, 1, 0)) == 3.0);
  CHECK(root.current.at(kT, root.layout().idx(1, 1, 0)) == 4.0);
}

TEST_CASE("restriction then injection preserves a constant") {
  auto st = setup_3d(4, 2);
  Simulation sim(st, 3);
  sim.spmd([&](Communicator& c, RankDomain& d) {
    for (auto& g : d.grids) {
      auto z = g.work(kMgZ);
      std::fill(z.begin(), z.end(), 0.0);
      if (g.depth() == d.deepest) {
        const auto& L = g.layout();
        for (std::int64_t lin = 0; lin < L.cells(); ++lin) z[static_cast<std::size_t>(L.interior(lin))] = 0.75;
      }
    }
    const Channel ch{Buf::kWork, kMgZ};
    d.ex.restrict_level(c, d.grids, d.deepest, std::span<const Channel>(&ch, 1));
    for (auto& g : d.grids) {
      if (g.depth() == d.deepest) {
        auto z = g.work(kMgZ);
        std::fill(z.begin(), z.end(), 0.0);
      }
    }
    d.ex.prolong_add(c, d.grids, d.deepest, ch);
  });
  for (int r = 0; r < 3; ++r) {
    for (auto& g : sim.domain(r).grids) {
      if (g.depth() < 1) continue;
      const auto& L = g.layout();
      for (std::int64_t lin = 0; lin < L.cells(); ++lin) CHECK(g.work(kMgZ)[static_cast<std::size_t>(L.interior(lin))] == 0.75);
    }
  }
}

TEST_CASE("cell types: unlinked halos are walls, interior grids take restricted codes") {
  auto st = setup_2d({4, 4, 1}, 1);
  st.objects.push_back(face(1, CellCode::kOutflow));
  BoundaryObject ob;
  ob.id = "block";
  ob.shape.box = Box{{0.0, 0.0, -1}, {0.25, 0.25, 1}};
  ob.code = CellCode::kObstacle;
  st.objects.push_back(ob);
  Simulation sim(st, 2);
  const auto& root = sim.domain(0).grids[0];
  const auto& L = root.layout();
  CHECK(root.code(L.idx(-1, 0, 0)) == CellCode::kWallNoSlip);
  // The 2x2 child block in the corner is fully obstacle, the east column outflow.
  CHECK(root.code(L.idx(0, 0, 0)) == CellCode::kObstacle);
  CHECK(root.code(L.idx(3, 2, 0)) == CellCode::kOutflow);
  CHECK(root.code(L.idx(1, 1, 0)) == CellCode::kFluid);
  CHECK(sim.domain(1).has_outflow);
}

TEST_CASE("momentum predictor: trivial cases") {
  auto st = setup_2d({8, 8, 1}, 0);
  st.fluid.beta = 3e-3;
  st.fluid.g = {0, -9.81, 0};
  st.fluid.mu = 1e-3;
  st.params.dt = 1e-2;
  SUBCASE("rest at reference temperature") {
    Simulation sim(st, 1);
    auto& g = sim.domain(0).grids[0];
    momentum_predictor(g, st.fluid, st.params, 2);
    for (int c = 0; c < 3; ++c)
      for (std::int64_t lin = 0; lin < g.cells(); ++lin) CHECK(g.temp.at(c, g.layout().interior(lin)) == 0.0);
  }
  SUBCASE("pure buoyancy") {
    st.T0 = st.fluid.T_inf + 1.0;
    Simulation sim(st, 1);
    auto& g = sim.domain(0).grids[0];
    momentum_predictor(g, st.fluid, st.params, 2);
    for (std::int64_t lin = 0; lin < g.cells(); ++lin) {
      const auto p = g.layout().interior(lin);
      CHECK(g.temp.at(kV, p) == doctest::Approx(-st.params.dt * 3e-3 * 9.81).epsilon(1e-12));
      CHECK(g.temp.at(kU, p) == 0.0);
    }
  }
}

TEST_CASE("momentum predictor matches a scripted conservative upwind stencil in 1D") {
  DomainSetup st;
  st.geom.r = {2, 1, 1};
  st.geom.s = {8, 1, 1};
  st.geom.domain = Box{{0, 0, 0}, {1, 0.125, 0.125}};
  st.params.dt = 0.01;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-1, 1);
  for (const double mu : {0.0, 0.05}) {
    for (int trial = 0; trial < 3; ++trial) {
      st.fluid.mu = mu;
      std::vector<double> u(8);
      for (int i = 0; i < 8; ++i) u[static_cast<std::size_t>(i)] = trial == 0 ? (i + 0.5) / 8 : U(rng);
      st.init = [&](const Vec3& x) { return std::array<double, 5>{u[static_cast<std::size_t>(x[0] * 8)], 0, 0, 0, 293.15}; };
      Simulation sim(st, 1);
      auto& g = sim.domain(0).grids[0];
      momentum_predictor(g, st.fluid, st.params, 2);
      const double h = 0.125, dt = st.params.dt, nu = mu;
      for (int i = 0; i < 8; ++i) {
        // Walls at both ends carry no flux; face value from the upwind side.
        const auto F = [&](int f) {  // face between cells f-1 and f
          if (f == 0 || f == 8) return 0.0;
          const double un = 0.5 * (u[f - 1] + u[f]);
          return un * (un >= 0 ? u[f - 1] : u[f]);
        };
        const auto lap_side = [&](int nb) { return nb < 0 || nb > 7 ? -2.0 * u[i] : u[nb] - u[i]; };
        // y faces are no-slip walls of the one-cell-high channel.
        const double diff = (lap_side(i - 1) + lap_side(i + 1)) / (h * h) - 2.0 * 2.0 * u[i] / (0.125 * 0.125);
        const double expect = u[i] - dt / h * (F(i + 1) - F(i)) + dt * nu * diff;
        CHECK(g.temp.at(kU, g.layout().idx(i, 0, 0)) == doctest::Approx(expect).epsilon(1e-13));
      }
    }
  }
}

TEST_CASE("divergence examples") {
  SUBCASE("constant flow between inflow and outflow is divergence-free everywhere") {
    auto st = setup_2d({8, 8, 1}, 1);
    st.objects.push_back(face(0, CellCode::kInflow, {1.5, 0, 0}));
    st.objects.push_back(face(1, CellCode::kOutflow));
    st.u0 = {1.5, 0, 0};
    Simulation sim(st, 2);
    double norm = -1;
    sim.spmd([&](Communicator& c, RankDomain& d) {
      const double n = divergence_norm(c, d, Buf::kCurrent);
      if (c.rank() == 0) norm = n;
    });
    CHECK(norm == 0.0);
  }
  SUBCASE("linear fields on the interior of a 3D block") {
    auto st = setup_3d(6, 0);
    for (int variant = 0; variant < 2; ++variant) {
      st.init = [&](const Vec3& x) {
        return variant == 0 ? std::array<double, 5>{x[0], -x[1], 0, 0, 293.15}
                            : std::array<double, 5>{x[0], 0, 0, 0, 293.15};
      };
      Simulation sim(st, 1);
      auto& g = sim.domain(0).grids[0];
      std::vector<double> out(g.layout().padded());
      divergence(g, {g.current.field(0), g.current.field(1), g.current.field(2)}, out, 3);
      for (int k = 1; k < 5; ++k)
        for (int j = 1; j < 5; ++j)
          for (int i = 1; i < 5; ++i)
            CHECK(out[static_cast<std::size_t>(g.layout().idx(i, j, k))] ==
                  doctest::Approx(variant == 0 ? 0.0 : 1.0).epsilon(1e-12).scale(1.0));
    }
  }
}

TEST_CASE("pressure operator equals the independent block operator") {
  for (int dims : {2, 3}) {
    auto st = dims == 2 ? setup_2d({8, 8, 1}, 0) : setup_3d(8, 0);
    st.objects.push_back(face(1, CellCode::kOutflow));
    st.objects.push_back(face(0, CellCode::kInflow, {1, 0, 0}));
    BoundaryObject ob;
    ob.shape.kind = ShapeKind::kCylinder;
    ob.shape.center = {0.5, 0.5, 0.5};
    ob.shape.radius = 0.2;
    st.objects.push_back(ob);
    Simulation sim(st, 1);
    auto& d = sim.domain(0);
    auto& g = d.grids[0];
    const Block blk = block_of(g, dims);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> U(-1, 1);
    std::vector<double> x(static_cast<std::size_t>(blk.padded()), 0.0);
    for (int k = 0; k < blk.n[2]; ++k)
      for (int j = 0; j < blk.n[1]; ++j)
        for (int i = 0; i < blk.n[0]; ++i) {
          const double v = U(rng);
          x[static_cast<std::size_t>(blk.id(i, j, k))] = v;
          g.work(kY)[static_cast<std::size_t>(g.layout().idx(i, j, k))] = v;
        }
    sim.spmd([&](Communicator& c, RankDomain& dd) { apply_pressure_operator(c, dd, {Buf::kWork, kY}, {Buf::kWork, kAp}); });
    // The oracle zeroes the gradient of non-fluid cells through their codes.
    const auto ref = blk.apply(x);
    for (int k = 0; k < blk.n[2]; ++k)
      for (int j = 0; j < blk.n[1]; ++j)
        for (int i = 0; i < blk.n[0]; ++i) {
          if (!blk.fluid(blk.id(i, j, k))) continue;
          CHECK(g.work(kAp)[static_cast<std::size_t>(g.layout().idx(i, j, k))] ==
                doctest::Approx(ref[static_cast<std::size_t>(blk.id(i, j, k))]).epsilon(1e-12));
        }
  }
}

TEST_CASE("Poisson solve on a single 8x8 grid matches a dense direct solve") {
  SUBCASE("closed box, zero-mean gauge") { check_single_grid_poisson(setup_2d({8, 8, 1}, 0), true, 1); }
  SUBCASE("outflow on the east face") {
    auto st = setup_2d({8, 8, 1}, 0);
    st.objects.push_back(face(1, CellCode::kOutflow));
    check_single_grid_poisson(st, false, 2);
  }
}

TEST_CASE("Poisson solve on a single 8x8x8 grid matches a dense direct solve") {
  SUBCASE("closed box") { check_single_grid_poisson(setup_3d(8, 0), true, 3); }
  SUBCASE("outflow") {
    auto st = setup_3d(8, 0);
    st.objects.push_back(face(1, CellCode::kOutflow));
    check_single_grid_poisson(st, false, 4);
  }
}

TEST_CASE("zero right-hand side gives zero pressure") {
  auto st = setup_2d({8, 8, 1}, 1);
  Simulation sim(st, 2);
  sim.spmd([&](Communicator& c, RankDomain& d) {
    for (auto& g : d.grids) std::fill(g.previous.field(kP).begin(), g.previous.field(kP).end(), 5.0);
    const auto stt = solve_pressure(c, d, {Buf::kPrevious, kP}, {Buf::kTemp, kP});
    CHECK(stt.cycles == 0);
  });
  for_leaf_cells(sim, [](DGrid& g, int, int, int, std::ptrdiff_t p) { CHECK(g.previous.at(kP, p) == 0.0); });
}

namespace {

// Random u* on fluid cells, then rhs, solve and projection; returns
// (||div u*||, ||div u||).
std::pair<double, double> project_random(DomainSetup st, int ranks, unsigned seed) {
  st.params.eps_mg = 1e-8;
  st.params.max_cycles = 4000;
  Simulation sim(st, ranks);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-1, 1);
  for_leaf_cells(sim, [&](DGrid& g, int, int, int, std::ptrdiff_t p) {
    for (int c = 0; c < 3; ++c) {
      const double v = c < sim.geometry().dims() ? U(rng) : 0.0;
      g.temp.at(c, p) = trsflow::spacetree::is_fluid(g.code(p)) ? v : g.current.at(c, p);
    }
  });
  double before = 0, after = 0;
  sim.spmd([&](Communicator& c, RankDomain& d) {
    const double b = divergence_norm(c, d, Buf::kTemp);
    compute_pressure_rhs(c, d);
    solve_pressure(c, d, {Buf::kPrevious, kP}, {Buf::kTemp, kP});
    project_velocity(c, d);
    const double a = divergence_norm(c, d, Buf::kPrevious);
    if (c.rank() == 0) {
      before = b;
      after = a;
    }
  });
  return {before, after};
}

}  // namespace

TEST_CASE("projection removes the divergence of a random field") {
  SUBCASE("16x16 channel") {
    auto st = setup_2d({16, 16, 1}, 0);
    st.objects.push_back(face(0, CellCode::kInflow, {1, 0, 0}));
    st.objects.push_back(face(1, CellCode::kOutflow));
    const auto [b, a] = project_random(st, 1, 5);
    MESSAGE("div ratio " << a / b);
    CHECK(a <= 1e-6 * b);
    CHECK(a <= 10 * 1e-8 * b);
  }
  SUBCASE("closed uniform two-level box on three ranks") {
    auto st = setup_2d({8, 8, 1}, 2);
    const auto [b, a] = project_random(st, 3, 6);
    MESSAGE("div ratio " << a / b);
    // The pinned row carries minus the sum of all other residuals.
    CHECK(a <= 1e-6 * b);
  }
  SUBCASE("adaptive channel with obstacle on two ranks") {
    auto st = setup_2d({8, 8, 1}, 1, 2.0, 1.0);
    st.geom.max_depth = 2;
    st.refine.push_back({Box{{0.5, 0.25, -1}, {1.0, 0.75, 1}}, 2});
    st.objects.push_back(face(0, CellCode::kInflow, {1, 0, 0}));
    st.objects.push_back(face(1, CellCode::kOutflow));
    BoundaryObject ob;
    ob.shape.kind = ShapeKind::kCylinder;
    ob.shape.center = {0.75, 0.5, 0};
    ob.shape.radius = 0.1;
    st.objects.push_back(ob);
    const auto [b, a] = project_random(st, 2, 7);
    MESSAGE("div ratio " << a / b);
    CHECK(a <= 1e-6 * b);
  }
  SUBCASE("3D box") {
    auto st = setup_3d(4, 1);
    st.objects.push_back(face(5, CellCode::kOutflow));
    const auto [b, a] = project_random(st, 2, 8);
    CHECK(a <= 10 * 1e-8 * b);
  }
}

TEST_CASE("extra cycles after convergence leave the pressure unchanged") {
  auto st = setup_2d({8, 8, 1}, 1);
  st.objects.push_back(face(1, CellCode::kOutflow));
  st.params.eps_mg = 1e-8;
  Simulation sim(st, 2);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> U(-1, 1);
  for_leaf_cells(sim, [&](DGrid& g, int, int, int, std::ptrdiff_t p) { g.temp.at(kP, p) = U(rng); });
  std::vector<double> first, second;
  sim.spmd([&](Communicator& c, RankDomain& d) {
    solve_pressure(c, d, {Buf::kPrevious, kP}, {Buf::kTemp, kP});
  });
  for_leaf_cells(sim, [&](DGrid& g, int, int, int, std::ptrdiff_t p) { first.push_back(g.previous.at(kP, p)); });
  for (auto& d : sim.domains()) d.params.eps_mg = 1e-11;
  sim.spmd([&](Communicator& c, RankDomain& d) {
    solve_pressure(c, d, {Buf::kPrevious, kP}, {Buf::kTemp, kP});
  });
  for_leaf_cells(sim, [&](DGrid& g, int, int, int, std::ptrdiff_t p) { second.push_back(g.previous.at(kP, p)); });
  double diff = 0, norm = 0;
  for (std::size_t i = 0; i < first.size(); ++i) {
    diff += (first[i] - second[i]) * (first[i] - second[i]);
    norm += second[i] * second[i];
  }
  CHECK(std::sqrt(diff / norm) < 1e-6);
}

TEST_CASE("projection trivial cases") {
  auto st = setup_2d({8, 8, 1}, 0);
  st.params.dt = 0.1;
  st.fluid.rho_inf = 2.0;
  Simulation sim(st, 1);
  auto& g = sim.domain(0).grids[0];
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> U(-1, 1);
  for_leaf_cells(sim, [&](DGrid& gg, int, int, int, std::ptrdiff_t p) {
    gg.temp.at(kU, p) = U(rng);
    gg.temp.at(kV, p) = U(rng);
  });
  SUBCASE("uniform pressure") {
    for_leaf_cells(sim, [&](DGrid& gg, int, int, int, std::ptrdiff_t p) { gg.previous.at(kP, p) = 4.0; });
    sim.spmd([&](Communicator& c, RankDomain& d) { project_velocity(c, d); });
    for_leaf_cells(sim, [&](DGrid& gg, int, int, int, std::ptrdiff_t p) {
      CHECK(gg.previous.at(kU, p) == gg.temp.at(kU, p));
      CHECK(gg.previous.at(kV, p) == gg.temp.at(kV, p));
    });
  }
  SUBCASE("linear pressure on interior cells") {
    for_leaf_cells(sim, [&](DGrid& gg, int, int, int, std::ptrdiff_t p) {
      gg.temp.at(kU, p) = 0;
      gg.temp.at(kV, p) = 0;
    });
    for_leaf_cells(sim, [&](DGrid& gg, int i, int, int, std::ptrdiff_t p) { gg.previous.at(kP, p) = 3.0 * (i + 0.5) / 8; });
    sim.spmd([&](Communicator& c, RankDomain& d) { project_velocity(c, d); });
    for (int j = 0; j < 8; ++j)
      for (int i = 1; i < 7; ++i) {
        const auto p = g.layout().idx(i, j, 0);
        CHECK(g.previous.at(kU, p) == doctest::Approx(-0.1 / 2.0 * 3.0));
        CHECK(g.previous.at(kV, p) == doctest::Approx(0.0));
      }
  }
}

TEST_CASE("energy step") {
  auto st = setup_2d({8, 8, 1}, 0);
  st.fluid.k_cond = 0.5;
  st.params.dt = 0.01;
  SUBCASE("uniform temperature at rest is unchanged") {
    st.T0 = 310.0;
    Simulation sim(st, 1);
    auto& g = sim.domain(0).grids[0];
    energy_step(g, g.previous, st.fluid, st.params, 2);
    for_leaf_cells(sim, [](DGrid& gg, int, int, int, std::ptrdiff_t p) { CHECK(gg.previous.at(kT, p) == 310.0); });
  }
  SUBCASE("uniform heat source") {
    st.fluid.q_int = 2.0e5;
    Simulation sim(st, 1);
    sim.advance(3);
    const double inc = st.params.dt * st.fluid.q_int / (st.fluid.rho_inf * st.fluid.c_p);
    for_leaf_cells(sim, [&](DGrid& gg, int, int, int, std::ptrdiff_t p) {
      CHECK(gg.current.at(kT, p) - gg.previous.at(kT, p) == doctest::Approx(inc).epsilon(1e-9));
      CHECK(gg.current.at(kT, p) == doctest::Approx(st.fluid.T_inf + 3 * inc).epsilon(1e-14));
    });
  }
}

namespace {

// Sets a random velocity on the fluid cells of a single grid; |u|, |v| <= vmax.
void random_velocity(DGrid& g, double vmax, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-vmax, vmax);
  const auto& s = g.layout().s();
  for (int j = 0; j < s[1]; ++j)
    for (int i = 0; i < s[0]; ++i) {
      const auto p = g.layout().idx(i, j, 0);
      if (!trsflow::spacetree::is_fluid(g.code(p))) continue;
      g.current.at(kU, p) = U(rng);
      g.current.at(kV, p) = U(rng);
    }
}

}  // namespace

TEST_CASE("temperature advection without conduction") {
  auto st = setup_2d({16, 16, 1}, 0);
  st.params.upwind = 0.05;  // momentum blending must not leak into the energy equation
  const double h = 1.0 / 16;
  st.params.dt = 0.45 * h / 2.0;  // sum of inflow Courant numbers <= 0.9 for |u|, |v| <= 1

  SUBCASE("a uniform temperature stays uniform under any velocity") {
    st.T0 = 301.25;
    Simulation sim(st, 1);
    auto& g = sim.domain(0).grids[0];
    random_velocity(g, 1.0, 3);
    energy_step(g, g.previous, st.fluid, st.params, 2);
    for_leaf_cells(sim, [](DGrid& gg, int, int, int, std::ptrdiff_t p) { CHECK(gg.previous.at(kT, p) == 301.25); });
  }
  SUBCASE("values stay within the initial range") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> U(280.0, 300.0);
    Simulation sim(st, 1);
    auto& g = sim.domain(0).grids[0];
    for_leaf_cells(sim, [&](DGrid& gg, int, int, int, std::ptrdiff_t p) { gg.current.at(kT, p) = U(rng); });
    for (int n = 0; n < 400; ++n) {
      random_velocity(g, 1.0, 100u + static_cast<unsigned>(n));
      energy_step(g, g.previous, st.fluid, st.params, 2);
      for_leaf_cells(sim, [](DGrid& gg, int, int, int, std::ptrdiff_t p) { gg.current.at(kT, p) = gg.previous.at(kT, p); });
    }
    double lo = 1e300, hi = -1e300;
    for_leaf_cells(sim, [&](DGrid& gg, int, int, int, std::ptrdiff_t p) {
      lo = std::min(lo, gg.current.at(kT, p));
      hi = std::max(hi, gg.current.at(kT, p));
    });
    CHECK(lo >= 280.0);
    CHECK(hi <= 300.0);
  }
}

TEST_CASE("1D advection from an inflow matches a scripted donor-cell reference") {
  DomainSetup st;
  st.geom.r = {2, 1, 1};
  st.geom.s = {16, 1, 1};
  st.geom.domain = Box{{0, 0, 0}, {1, 1.0 / 16, 1.0 / 16}};
  st.fluid.mu = 0;
  st.params.dt = 0.02;
  st.params.upwind = 0.3;
  st.u0 = {1.0, 0, 0};
  auto in = face(0, CellCode::kInflow, {1, 0, 0}, 310.0);
  st.objects = {in, face(1, CellCode::kOutflow)};
  st.init = [](const Vec3& x) { return std::array<double, 5>{1, 0, 0, 0, 290.0 + 5.0 * x[0]}; };
  Simulation sim(st, 1);
  auto& g = sim.domain(0).grids[0];
  // Interior cells 1..14; cell 0 and 15 are the inflow and outflow layers.
  std::vector<double> T(16);
  for (int i = 0; i < 16; ++i) T[static_cast<std::size_t>(i)] = g.current.at(kT, g.layout().idx(i, 0, 0));
  const double c = st.params.dt * 1.0 / (1.0 / 16);
  energy_step(g, g.previous, st.fluid, st.params, 1);
  for (int i = 1; i < 15; ++i) {
    const double ref = T[i] - c * (T[i] - T[i - 1]);
    CHECK(g.previous.at(kT, g.layout().idx(i, 0, 0)) == doctest::Approx(ref).epsilon(1e-13));
  }
}

TEST_CASE("1D diffusion of a step matches an explicit Euler reference") {
  DomainSetup st;
  st.geom.r = {2, 1, 1};
  st.geom.s = {16, 1, 1};
  st.geom.domain = Box{{0, 0, 0}, {1, 1.0 / 16, 1.0 / 16}};
  st.fluid.mu = 0;
  st.fluid.k_cond = 2.0;
  st.params.dt = 1e-5;
  st.init = [](const Vec3& x) { return std::array<double, 5>{0, 0, 0, 0, x[0] < 0.5 ? 300.0 : 290.0}; };
  Simulation sim(st, 1);
  std::vector<double> T(16);
  for (int i = 0; i < 16; ++i) T[static_cast<std::size_t>(i)] = i < 8 ? 300.0 : 290.0;
  const double a = st.fluid.alpha(), h = 1.0 / 16, dt = st.params.dt;
  for (int n = 0; n < 20; ++n) {
    std::vector<double> next(16);
    for (int i = 0; i < 16; ++i) {
      double lap = 0;
      if (i > 0) lap += T[i - 1] - T[i];
      if (i < 15) lap += T[i + 1] - T[i];
      next[i] = T[i] + dt * a * lap / (h * h);
    }
    T.swap(next);
  }
  sim.advance(20);
  auto& g = sim.domain(0).grids[0];
  for (int i = 0; i < 16; ++i) CHECK(g.current.at(kT, g.layout().idx(i, 0, 0)) == doctest::Approx(T[i]).epsilon(1e-12));
}

TEST_CASE("quiescent isothermal domain is a fixed point and rotation keeps the pre-step state") {
  auto st = setup_2d({8, 8, 1}, 2);
  st.fluid.beta = 3e-3;
  st.fluid.g = {0, -9.81, 0};
  st.fluid.mu = 1e-3;
  Simulation sim(st, 3);
  std::vector<double> before;
  for (auto& d : sim.domains())
    for (auto& g : d.grids) {
      const auto& L = g.layout();
      for (std::int64_t lin = 0; lin < L.cells(); ++lin)
        for (int f = 0; f < 5; ++f) before.push_back(g.current.at(f, L.interior(lin)));
    }
  sim.advance(5);
  std::size_t n = 0;
  for (auto& d : sim.domains())
    for (auto& g : d.grids) {
      const auto& L = g.layout();
      for (std::int64_t lin = 0; lin < L.cells(); ++lin)
        for (int f = 0; f < 5; ++f) {
          CHECK(g.current.at(f, L.interior(lin)) == before[n]);
          CHECK(g.previous.at(f, L.interior(lin)) == before[n]);
          ++n;
        }
    }
}

TEST_CASE("previous buffer equals the pre-step current buffer bitwise") {
  auto st = setup_2d({8, 8, 1}, 1);
  st.fluid.mu = 1e-2;
  st.objects.push_back(face(3, CellCode::kInflow, {1, 0, 0}));  // moving lid
  Simulation sim(st, 2);
  sim.advance(3);
  std::vector<FieldBuffer> saved;
  for (auto& d : sim.domains())
    for (auto& g : d.grids) saved.push_back(g.current);
  sim.advance(1);
  std::size_t n = 0;
  for (auto& d : sim.domains())
    for (auto& g : d.grids) {
      const auto& L = g.layout();
      for (std::int64_t lin = 0; lin < L.cells(); ++lin)
        for (int f = 0; f < 5; ++f) CHECK(g.previous.at(f, L.interior(lin)) == saved[n].at(f, L.interior(lin)));
      ++n;
    }
}

TEST_CASE("two identical runs are bitwise identical over 100 steps") {
  auto st = setup_2d({8, 8, 1}, 1);
  st.geom.max_depth = 2;
  st.refine.push_back({Box{{0, 0.5, -1}, {0.5, 1, 1}}, 2});
  st.fluid.mu = 1e-2;
  st.params.dt = 2e-3;
  st.objects.push_back(face(3, CellCode::kInflow, {1, 0, 0}));
  Simulation a(st, 2), b(st, 2);
  a.advance(100);
  b.advance(100);
  bool same = true;
  double vmax = 0;
  for (int r = 0; r < 2; ++r)
    for (std::size_t i = 0; i < a.domain(r).grids.size(); ++i) {
      same = same && a.domain(r).grids[i].interior_equal(b.domain(r).grids[i]);
      const auto& g = a.domain(r).grids[i];
      for (std::int64_t lin = 0; lin < g.cells(); ++lin) vmax = std::max(vmax, std::abs(g.current.at(kU, g.layout().interior(lin))));
    }
  CHECK(same);
  CHECK(vmax > 0.1);  // the lid actually drives a flow
}

TEST_CASE("non-finite state raises a divergence error") {
  auto st = setup_2d({8, 8, 1}, 0);
  Simulation sim(st, 1);
  sim.domain(0).grids[0].current.at(kT, sim.domain(0).grids[0].layout().idx(3, 3, 0)) = std::nan("");
  CHECK_THROWS_AS(sim.advance(1), DivergenceError);
}

TEST_CASE("parameter validation") {
  SolverParams p;
  p.omega = 1.5;
  CHECK_THROWS(p.validate());
  p = {};
  p.dt = 0;
  CHECK_THROWS(p.validate());
  FluidProperties f;
  f.rho_inf = 0;
  CHECK_THROWS(f.validate());
}
