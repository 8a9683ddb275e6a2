#include "trsflow/solver/stepper.hpp"

#include <cmath>
#include <cstdio>

#include "trsflow/solver/kernels.hpp"

namespace trsflow::solver {

using spacetree::kNumFields;
using spacetree::kP;
using spacetree::kT;

std::string time_label(double t) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", t);
  return buf;
}

double divergence_norm(Communicator& c, RankDomain& d, Buf buf) {
  const Channel vel[3] = {{buf, 0}, {buf, 1}, {buf, 2}};
  d.ex.ghost_update(c, d.grids, vel);
  for (std::size_t i = 0; i < d.grids.size(); ++i) {
    if (!d.is_leaf(i)) continue;
    auto& g = d.grids[i];
    divergence(g, {channel_data(g, vel[0]), channel_data(g, vel[1]), channel_data(g, vel[2])}, g.work(kR),
               d.dims());
  }
  const Channel r{Buf::kWork, kR};
  return std::sqrt(dot(c, d, r, r));
}

void compute_pressure_rhs(Communicator& c, RankDomain& d) {
  const double scale = d.fluid.rho_inf / d.params.dt;
  const Channel ustar[3] = {{Buf::kTemp, 0}, {Buf::kTemp, 1}, {Buf::kTemp, 2}};
  d.ex.ghost_update(c, d.grids, ustar);
  for (std::size_t i = 0; i < d.grids.size(); ++i) {
    if (!d.is_leaf(i)) continue;
    auto& g = d.grids[i];
    auto rhs = g.temp.field(kP);
    divergence(g, {g.temp.field(0), g.temp.field(1), g.temp.field(2)}, rhs, d.dims());
    for (auto& v : rhs) v *= scale;
  }
}

void project_velocity(Communicator& c, RankDomain& d) {
  const double scale = d.params.dt / d.fluid.rho_inf;
  const Channel pnew{Buf::kPrevious, kP};
  d.ex.ghost_update(c, d.grids, std::span<const Channel>(&pnew, 1));
  for (std::size_t i = 0; i < d.grids.size(); ++i) {
    if (!d.is_leaf(i)) continue;
    auto& g = d.grids[i];
    gradient(g, g.previous.field(kP), {g.work(kGx), g.work(kGy), g.work(kGz)}, d.dims());
    const auto& L = g.layout();
    for (std::int64_t lin = 0; lin < L.cells(); ++lin) {
      const auto p = L.interior(lin);
      const bool fluid = spacetree::is_fluid(g.code(p));
      for (int a = 0; a < 3; ++a) {
        const double corr = fluid ? scale * g.work(kGx + a)[static_cast<std::size_t>(p)] : 0.0;
        g.previous.at(a, p) = g.temp.at(a, p) - corr;
      }
    }
  }
}

StepReport time_step(Communicator& c, RankDomain& d) {
  const int dims = d.dims();
  const double dt = d.params.dt;
  StepReport rep;

  std::vector<Channel> state;
  for (int f = 0; f < kNumFields; ++f) state.push_back({Buf::kCurrent, f});
  d.ex.ghost_update(c, d.grids, state);

  double cfl = 0.0;
  for (std::size_t i = 0; i < d.grids.size(); ++i) {
    if (d.is_leaf(i)) cfl = std::max(cfl, max_cfl(d.grids[i], dt, dims));
  }
  rep.cfl = c.allreduce_max(cfl);
  rep.cfl_exceeded = rep.cfl > d.params.cfl_limit;

  for (std::size_t i = 0; i < d.grids.size(); ++i) {
    if (d.is_leaf(i)) momentum_predictor(d.grids[i], d.fluid, d.params, dims);
  }
  compute_pressure_rhs(c, d);
  for (std::size_t i = 0; i < d.grids.size(); ++i) {
    if (!d.is_leaf(i)) continue;
    auto& g = d.grids[i];
    const auto pc = g.current.field(kP);
    std::copy(pc.begin(), pc.end(), g.previous.field(kP).begin());
  }
  rep.poisson = solve_pressure(c, d, {Buf::kPrevious, kP}, {Buf::kTemp, kP});
  project_velocity(c, d);
  for (std::size_t i = 0; i < d.grids.size(); ++i) {
    if (!d.is_leaf(i)) continue;
    auto& g = d.grids[i];
    energy_step(g, g.previous, d.fluid, d.params, dims);
    apply_boundary_values(g, g.previous, dims);
  }

  bool bad = false;
  for (std::size_t i = 0; i < d.grids.size(); ++i) {
    if (d.is_leaf(i)) bad = bad || has_nonfinite(d.grids[i], d.grids[i].previous);
  }
  if (c.allreduce_or(bad)) {
    throw DivergenceError("non-finite field value at step " + std::to_string(d.step + 1));
  }

  std::vector<Channel> next;
  for (int f = 0; f < kNumFields; ++f) next.push_back({Buf::kPrevious, f});
  d.ex.restrict_all(c, d.grids, next);
  for (auto& g : d.grids) g.rotate();
  ++d.step;
  rep.step = d.step;
  rep.t = d.time();
  return rep;
}

}  // namespace trsflow::solver
