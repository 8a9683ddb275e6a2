#pragma once

#include <optional>
#include <string>
#include <vector>

#include "trsflow/solver/domain.hpp"

namespace trsflow::cli {

using spacetree::ConfigError;

/// Everything a run needs, as read from a TOML run file.
struct RunConfig {
  std::string name;
  spacetree::GridGeometry geom;
  std::vector<spacetree::RefineRegion> refine;
  solver::FluidProperties fluid;
  solver::SolverParams params;
  std::vector<solver::BoundaryObject> objects;
  spacetree::Vec3 u0{0, 0, 0};
  std::optional<double> T0;

  int ranks = 1;
  int aggregators = 0;  // 0: one per rank
  double snapshot_interval = 0.0;
  double end_time = 0.0;
  std::string output;

  [[nodiscard]] solver::DomainSetup setup() const;
  /// Throws ConfigError naming the offending key.
  void validate() const;

  bool operator==(const RunConfig&) const = default;
};

/// Parse errors carry the source position; semantic errors name the key.
[[nodiscard]] RunConfig parse_config(const std::string& text, const std::string& source = "<string>");
[[nodiscard]] RunConfig load_config(const std::string& path);
/// Canonical TOML: fixed key order, every field explicit, round-trips exactly.
[[nodiscard]] std::string to_toml(const RunConfig& cfg);

}  // namespace trsflow::cli
