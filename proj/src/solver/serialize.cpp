#include "trsflow/solver/serialize.hpp"

namespace trsflow::spacetree {

void to_json(nlohmann::json& j, const Box& b) { j = nlohmann::json{{"lo", b.lo}, {"hi", b.hi}}; }

void from_json(const nlohmann::json& j, Box& b) {
  j.at("lo").get_to(b.lo);
  j.at("hi").get_to(b.hi);
}

void to_json(nlohmann::json& j, const GridGeometry& g) {
  j = nlohmann::json{{"r", g.r}, {"s", g.s}, {"max_depth", g.max_depth}, {"domain", g.domain}};
}

void from_json(const nlohmann::json& j, GridGeometry& g) {
  g = GridGeometry{};
  g.r = j.value("r", g.r);
  g.s = j.value("s", g.s);
  g.max_depth = j.value("max_depth", g.max_depth);
  j.at("domain").get_to(g.domain);
}

void to_json(nlohmann::json& j, const RefineRegion& r) { j = nlohmann::json{{"box", r.box}, {"depth", r.depth}}; }

void from_json(const nlohmann::json& j, RefineRegion& r) {
  j.at("box").get_to(r.box);
  r.depth = j.at("depth").get<int>();
}

void to_json(nlohmann::json& j, const CellCode& c) { j = to_string(c); }

void from_json(const nlohmann::json& j, CellCode& c) { c = cell_code_from_string(j.get<std::string>()); }

void to_json(nlohmann::json& j, const BcParams& p) {
  j = nlohmann::json{{"velocity", p.velocity}, {"temperature", p.temperature}};
}

void from_json(const nlohmann::json& j, BcParams& p) {
  p = BcParams{};
  p.velocity = j.value("velocity", p.velocity);
  p.temperature = j.value("temperature", p.temperature);
}

}  // namespace trsflow::spacetree

namespace trsflow::solver {

namespace {

const char* kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::kBox: return "box";
    case ShapeKind::kCylinder: return "cylinder";
    case ShapeKind::kFace: return "face";
  }
  return "box";
}

ShapeKind kind_from(const std::string& s) {
  if (s == "box") return ShapeKind::kBox;
  if (s == "cylinder") return ShapeKind::kCylinder;
  if (s == "face") return ShapeKind::kFace;
  throw spacetree::ConfigError("unknown shape kind '" + s + "'");
}

}  // namespace

void to_json(nlohmann::json& j, const Shape& s) {
  j = nlohmann::json{{"kind", kind_name(s.kind)}};
  switch (s.kind) {
    case ShapeKind::kBox: j["box"] = s.box; break;
    case ShapeKind::kCylinder:
      j["center"] = s.center;
      j["radius"] = s.radius;
      j["axis"] = s.axis;
      break;
    case ShapeKind::kFace: j["face"] = s.face; break;
  }
}

void from_json(const nlohmann::json& j, Shape& s) {
  s = Shape{};
  s.kind = kind_from(j.at("kind").get<std::string>());
  if (j.contains("box")) j.at("box").get_to(s.box);
  s.center = j.value("center", s.center);
  s.radius = j.value("radius", s.radius);
  s.axis = j.value("axis", s.axis);
  s.face = j.value("face", s.face);
}

void to_json(nlohmann::json& j, const InflowProfile& p) {
  j = nlohmann::json{{"parabolic", p.parabolic}, {"axis", p.axis}, {"lo", p.lo}, {"hi", p.hi}};
}

void from_json(const nlohmann::json& j, InflowProfile& p) {
  p = InflowProfile{};
  p.parabolic = j.value("parabolic", p.parabolic);
  p.axis = j.value("axis", p.axis);
  p.lo = j.value("lo", p.lo);
  p.hi = j.value("hi", p.hi);
}

void to_json(nlohmann::json& j, const BoundaryObject& o) {
  j = nlohmann::json{{"id", o.id}, {"shape", o.shape}, {"code", o.code}, {"params", o.params}};
  if (o.profile.parabolic) j["profile"] = o.profile;
}

void from_json(const nlohmann::json& j, BoundaryObject& o) {
  o = BoundaryObject{};
  o.id = j.value("id", std::string{});
  j.at("shape").get_to(o.shape);
  if (j.contains("code")) j.at("code").get_to(o.code);
  if (j.contains("params")) j.at("params").get_to(o.params);
  if (j.contains("profile")) j.at("profile").get_to(o.profile);
}

void to_json(nlohmann::json& j, const FluidProperties& f) {
  j = nlohmann::json{{"rho_inf", f.rho_inf}, {"mu", f.mu},         {"beta", f.beta}, {"T_inf", f.T_inf},
                     {"g", f.g},             {"k_cond", f.k_cond}, {"c_p", f.c_p},   {"q_int", f.q_int}};
}

void from_json(const nlohmann::json& j, FluidProperties& f) {
  f = FluidProperties{};
  f.rho_inf = j.value("rho_inf", f.rho_inf);
  f.mu = j.value("mu", f.mu);
  f.beta = j.value("beta", f.beta);
  f.T_inf = j.value("T_inf", f.T_inf);
  f.g = j.value("g", f.g);
  f.k_cond = j.value("k_cond", f.k_cond);
  f.c_p = j.value("c_p", f.c_p);
  f.q_int = j.value("q_int", f.q_int);
}

void to_json(nlohmann::json& j, const SolverParams& p) {
  j = nlohmann::json{{"dt", p.dt},
                     {"nu1", p.nu1},
                     {"nu2", p.nu2},
                     {"omega", p.omega},
                     {"eps_mg", p.eps_mg},
                     {"max_cycles", p.max_cycles},
                     {"cfl_limit", p.cfl_limit},
                     {"coarse_sweeps", p.coarse_sweeps},
                     {"upwind", p.upwind},
                     {"parity", p.parity},
                     {"wide_sweeps", p.wide_sweeps}};
}

void from_json(const nlohmann::json& j, SolverParams& p) {
  p = SolverParams{};
  p.dt = j.value("dt", p.dt);
  p.nu1 = j.value("nu1", p.nu1);
  p.nu2 = j.value("nu2", p.nu2);
  p.omega = j.value("omega", p.omega);
  p.eps_mg = j.value("eps_mg", p.eps_mg);
  p.max_cycles = j.value("max_cycles", p.max_cycles);
  p.cfl_limit = j.value("cfl_limit", p.cfl_limit);
  p.coarse_sweeps = j.value("coarse_sweeps", p.coarse_sweeps);
  p.upwind = j.value("upwind", p.upwind);
  p.parity = j.value("parity", p.parity);
  p.wide_sweeps = j.value("wide_sweeps", p.wide_sweeps);
}

}  // namespace trsflow::solver
