#pragma once

#include "trsflow/solver/domain.hpp"

namespace trsflow::solver {

struct PoissonStats {
  int cycles = 0;         // preconditioner applications (V-cycles)
  double residual = 0.0;  // final ||b - A x||_2
  double rhs_norm = 0.0;
};

// All functions are collective and act on the fluid cells of leaf grids.

/// out = D(G(in)): the divergence of the cell gradient, the operator whose
/// solution makes the projected velocity discretely divergence-free. In
/// closed domains the row of the pinned cell is replaced by a multiple of
/// the identity, which removes the constant null space.
void apply_pressure_operator(Communicator& c, RankDomain& d, Channel in, Channel out);

/// out = one V-cycle on the compact Laplacian applied to `in`, starting from
/// zero. Levels are depths: leaves carry `in`, interior grids the restricted
/// residual; damped Jacobi with nu*2^(L-l) sweeps and coarse_sweeps on the root.
void vcycle(Communicator& c, RankDomain& d, Channel in, Channel out);

/// Preconditioner for the wide operator itself. A = D(G(.)) couples each
/// leaf cell only to cells two apart, so on a uniform patch it splits into
/// r_x*r_y*r_z interleaved subgrids whose stencil is the compact Laplacian of
/// the parent level. Each parity class of the leaf input is injected into
/// the parents, a V-cycle runs over the interior grids and the correction is
/// injected back, followed by SolverParams::wide_sweeps Jacobi sweeps with A
/// itself. Falls back to vcycle when the root is the only grid.
/// Uses the work channels kMg*, kG* and kAs.
void parity_precondition(Communicator& c, RankDomain& d, Channel in, Channel out);

/// Solves A x = b (A as in apply_pressure_operator) with BiCGStab, right
/// preconditioned by parity_precondition (vcycle when
/// SolverParams::parity is off), to ||r|| <= eps_mg ||b||. Without outflow
/// cells the mean of b is removed, b is zeroed at the pinned cell and x is
/// returned with zero mean. On uniform grids the dropped equation then holds
/// automatically; across refinement jumps its residual is the mass defect of
/// the non-conservative interface.
/// Throws ConvergenceError after max_cycles V-cycles.
PoissonStats solve_pressure(Communicator& c, RankDomain& d, Channel x, Channel b);

/// Fluid-cell inner product over all ranks, accumulated in a fixed order.
[[nodiscard]] double dot(Communicator& c, RankDomain& d, Channel a, Channel b);
/// Number of fluid leaf cells over all ranks.
[[nodiscard]] std::int64_t fluid_cells(Communicator& c, const RankDomain& d);

}  // namespace trsflow::solver
