#pragma once

#include <cstdint>
#include <string>

#include "trsflow/solver/domain.hpp"
#include "trsflow/solver/poisson.hpp"

namespace trsflow::solver {

struct StepReport {
  std::int64_t step = 0;  // steps completed after this one
  double t = 0.0;
  double cfl = 0.0;
  bool cfl_exceeded = false;
  PoissonStats poisson;
};

/// One fractional step (collective). Ghost update, momentum predictor into
/// temp, pressure solve with rhs rho/dt div(u*) stored in temp.p, projection
/// and energy update into previous, boundary values, restriction to interior
/// grids, then previous and current swap. Throws DivergenceError if a
/// non-finite value appears on any rank.
StepReport time_step(Communicator& c, RankDomain& d);

/// Ghost-updates u* (temp u,v,w) and stores rho/dt div(u*) in temp.p.
void compute_pressure_rhs(Communicator& c, RankDomain& d);

/// previous.u = temp.u - dt/rho G(previous.p) on fluid leaf cells; other
/// cells take temp.u.
void project_velocity(Communicator& c, RankDomain& d);

/// ||div u||_2 over fluid leaf cells of the given buffer (collective, runs a
/// ghost update of the velocity).
double divergence_norm(Communicator& c, RankDomain& d, Buf buf);

/// Snapshot label of an elapsed time: fixed-point "%.6f".
[[nodiscard]] std::string time_label(double t);

}  // namespace trsflow::solver
