#pragma once

#include <json.hpp>

#include "trsflow/solver/boundary.hpp"
#include "trsflow/solver/params.hpp"
#include "trsflow/spacetree/tree.hpp"

// JSON forms of the run description, shared by checkpoint attributes, the
// gateway protocol and the CLI. Readers fill missing keys with defaults.

namespace trsflow::spacetree {

void to_json(nlohmann::json& j, const Box& b);
void from_json(const nlohmann::json& j, Box& b);
void to_json(nlohmann::json& j, const GridGeometry& g);
void from_json(const nlohmann::json& j, GridGeometry& g);
void to_json(nlohmann::json& j, const RefineRegion& r);
void from_json(const nlohmann::json& j, RefineRegion& r);
void to_json(nlohmann::json& j, const CellCode& c);
void from_json(const nlohmann::json& j, CellCode& c);
void to_json(nlohmann::json& j, const BcParams& p);
void from_json(const nlohmann::json& j, BcParams& p);

}  // namespace trsflow::spacetree

namespace trsflow::solver {

void to_json(nlohmann::json& j, const Shape& s);
void from_json(const nlohmann::json& j, Shape& s);
void to_json(nlohmann::json& j, const InflowProfile& p);
void from_json(const nlohmann::json& j, InflowProfile& p);
void to_json(nlohmann::json& j, const BoundaryObject& o);
void from_json(const nlohmann::json& j, BoundaryObject& o);
void to_json(nlohmann::json& j, const FluidProperties& f);
void from_json(const nlohmann::json& j, FluidProperties& f);
void to_json(nlohmann::json& j, const SolverParams& p);
void from_json(const nlohmann::json& j, SolverParams& p);

}  // namespace trsflow::solver
