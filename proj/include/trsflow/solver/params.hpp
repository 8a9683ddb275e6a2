#pragma once

#include <stdexcept>
#include <string>

#include "trsflow/spacetree/geometry.hpp"

namespace trsflow::solver {

using spacetree::Vec3;

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A non-finite value appeared in the field state.
class DivergenceError : public SolverError {
 public:
  using SolverError::SolverError;
};

class ConvergenceError : public SolverError {
 public:
  ConvergenceError(const std::string& what, double residual) : SolverError(what), residual_(residual) {}
  [[nodiscard]] double residual() const { return residual_; }

 private:
  double residual_;
};

struct FluidProperties {
  double rho_inf = 1.0;    // kg/m^3
  double mu = 1e-3;        // Pa s
  double beta = 0.0;       // 1/K
  double T_inf = 293.15;   // K
  Vec3 g{0.0, 0.0, 0.0};   // m/s^2
  double k_cond = 0.0;     // W/(m K)
  double c_p = 1000.0;     // J/(kg K)
  double q_int = 0.0;      // W/m^3, applied uniformly to fluid cells

  [[nodiscard]] double nu() const { return mu / rho_inf; }
  [[nodiscard]] double alpha() const { return k_cond / (rho_inf * c_p); }
  void validate() const;

  bool operator==(const FluidProperties&) const = default;
};

struct SolverParams {
  double dt = 1e-3;
  int nu1 = 2;
  int nu2 = 2;
  double omega = 0.8;
  double eps_mg = 1e-8;
  int max_cycles = 500;
  double cfl_limit = 1.0;
  int coarse_sweeps = 64;
  /// Weight of the upwind part in the convective fluxes; 1 is pure
  /// first-order upwind, smaller values blend in central differences.
  double upwind = 1.0;
  /// Precondition with parity_precondition instead of a plain V-cycle.
  bool parity = true;
  /// Jacobi sweeps with the pressure operator after each parity cycle.
  int wide_sweeps = 2;

  void validate() const;

  bool operator==(const SolverParams&) const = default;
};

}  // namespace trsflow::solver
