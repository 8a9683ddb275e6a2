#pragma once

#include <array>
#include <span>

#include "trsflow/solver/boundary.hpp"
#include "trsflow/solver/params.hpp"

namespace trsflow::solver {

// Per-grid stencils on leaf d-grids. Halos must be filled. Only FLUID cells
// are computed; axes >= dims are skipped so 2D runs ignore the z faces.

using ConstField = std::span<const double>;
using Velocity = std::array<ConstField, 3>;

/// Normal velocity on the face between fluid cell p and its neighbour nb.
[[nodiscard]] double face_velocity(const DGrid& g, ConstField ua, std::ptrdiff_t p, std::ptrdiff_t nb);

/// Writes u* of every fluid cell into g.temp (u,v,w) from g.current; other
/// cells copy current.
void momentum_predictor(DGrid& g, const FluidProperties& fp, const SolverParams& sp, int dims);

/// Explicit temperature update from g.current into out.T (fluid cells);
/// other cells copy current T.
void energy_step(DGrid& g, FieldBuffer& out, const FluidProperties& fp, const SolverParams& sp, int dims);

/// Face-flux divergence of a velocity field; 0 outside fluid cells.
void divergence(const DGrid& g, const Velocity& vel, std::span<double> out, int dims);

/// Cell gradient of x from face values (average between fluid cells, 0 at
/// outflow, x_p elsewhere); 0 outside fluid cells.
void gradient(const DGrid& g, ConstField x, const std::array<std::span<double>, 3>& out, int dims);

/// r = b - Lc z with the compact Laplacian Lc used by the preconditioner.
void compact_residual(const DGrid& g, ConstField z, ConstField b, std::span<double> r, int dims);

/// One damped Jacobi sweep on Lc z = b; `scratch` receives the residual.
void jacobi_sweep(const DGrid& g, std::span<double> z, ConstField b, std::span<double> scratch, double omega,
                  int dims);

/// Largest sum_a |u_a| dt / h_a over fluid cells.
[[nodiscard]] double max_cfl(const DGrid& g, double dt, int dims);

/// True if any interior value of `buf` is not finite.
[[nodiscard]] bool has_nonfinite(const DGrid& g, const FieldBuffer& buf);

}  // namespace trsflow::solver
