#include "trsflow/solver/params.hpp"

#include <cmath>

namespace trsflow::solver {

using spacetree::ConfigError;

void FluidProperties::validate() const {
  if (!(rho_inf > 0.0)) throw ConfigError("rho_inf must be positive");
  if (!(mu >= 0.0)) throw ConfigError("mu must be non-negative");
  if (!(c_p > 0.0)) throw ConfigError("c_p must be positive");
  if (!(k_cond >= 0.0)) throw ConfigError("k_cond must be non-negative");
  for (double x : {beta, T_inf, g[0], g[1], g[2], q_int}) {
    if (!std::isfinite(x)) throw ConfigError("fluid properties must be finite");
  }
}

void SolverParams::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt must be positive");
  if (!(omega > 0.0 && omega <= 1.0)) throw ConfigError("omega must lie in (0, 1]");
  if (!(eps_mg > 0.0)) throw ConfigError("eps_mg must be positive");
  if (nu1 < 0 || nu2 < 0 || wide_sweeps < 0 || coarse_sweeps < 1) throw ConfigError("smoothing counts must be non-negative");
  if (max_cycles < 1) throw ConfigError("max_cycles must be >= 1");
  if (!(cfl_limit > 0.0)) throw ConfigError("cfl_limit must be positive");
  if (!(upwind >= 0.0 && upwind <= 1.0)) throw ConfigError("upwind weight must lie in [0, 1]");
}

}  // namespace trsflow::solver
