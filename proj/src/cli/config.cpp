#include "trsflow/cli/config.hpp"

#include <toml.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace trsflow::cli {

using solver::BoundaryObject;
using solver::ShapeKind;
using spacetree::Box;
using spacetree::CellCode;
using spacetree::Index3;
using spacetree::Vec3;

namespace {

// Typed access to one TOML table; every key must be consumed.
class Table {
 public:
  Table(const toml::table& t, std::string path) : t_(t), path_(std::move(path)) {}

  [[nodiscard]] bool has(const std::string& key) const { return t_.contains(key); }

  double number(const std::string& key, std::optional<double> fallback = std::nullopt) {
    const auto* n = node(key, fallback.has_value());
    if (!n) return *fallback;
    if (const auto v = n->value<double>()) return *v;
    throw error(key, "must be a number");
  }

  int integer(const std::string& key, std::optional<int> fallback = std::nullopt) {
    const auto* n = node(key, fallback.has_value());
    if (!n) return *fallback;
    if (!n->is_integer()) throw error(key, "must be an integer");
    return static_cast<int>(*n->value<std::int64_t>());
  }

  bool boolean(const std::string& key, std::optional<bool> fallback = std::nullopt) {
    const auto* n = node(key, fallback.has_value());
    if (!n) return *fallback;
    if (!n->is_boolean()) throw error(key, "must be true or false");
    return *n->value<bool>();
  }

  std::string string(const std::string& key, std::optional<std::string> fallback = std::nullopt) {
    const auto* n = node(key, fallback.has_value());
    if (!n) return *fallback;
    if (!n->is_string()) throw error(key, "must be a string");
    return *n->value<std::string>();
  }

  template <std::size_t N>
  std::array<double, N> numbers(const std::string& key, std::optional<std::array<double, N>> fallback = std::nullopt) {
    const auto* n = node(key, fallback.has_value());
    if (!n) return *fallback;
    const auto* a = n->as_array();
    if (!a || a->size() != N) throw error(key, "must be an array of " + std::to_string(N) + " numbers");
    std::array<double, N> out{};
    for (std::size_t i = 0; i < N; ++i) {
      const auto v = (*a)[i].template value<double>();
      if (!v) throw error(key, "must be an array of " + std::to_string(N) + " numbers");
      out[i] = *v;
    }
    return out;
  }

  Index3 ints3(const std::string& key) {
    const auto* a = node(key, false)->as_array();
    if (!a || a->size() != 3) throw error(key, "must be an array of 3 integers");
    Index3 out{};
    for (std::size_t i = 0; i < 3; ++i) {
      if (!(*a)[i].is_integer()) throw error(key, "must be an array of 3 integers");
      out[i] = static_cast<int>(*(*a)[i].value<std::int64_t>());
    }
    return out;
  }

  Box box(const std::string& key) {
    const auto v = numbers<6>(key);
    return Box{{v[0], v[1], v[2]}, {v[3], v[4], v[5]}};
  }

  Table table(const std::string& key, bool required = true) {
    const auto* n = node(key, !required);
    static const toml::table kEmpty;
    if (!n) return Table(kEmpty, sub(key));
    if (!n->is_table()) throw error(key, "must be a table");
    return Table(*n->as_table(), sub(key));
  }

  std::vector<Table> tables(const std::string& key) {
    std::vector<Table> out;
    const auto* n = node(key, true);
    if (!n) return out;
    const auto* a = n->as_array();
    if (!a) throw error(key, "must be an array of tables ([[" + key + "]])");
    for (std::size_t i = 0; i < a->size(); ++i) {
      if (!(*a)[i].is_table()) throw error(key, "must be an array of tables ([[" + key + "]])");
      out.emplace_back(*(*a)[i].as_table(), sub(key) + "[" + std::to_string(i) + "]");
    }
    return out;
  }

  /// Rejects keys that were never read (typos, keys of another shape kind).
  void finish() const {
    for (const auto& [k, v] : t_) {
      if (!used_.count(std::string(k.str()))) throw ConfigError("unknown key " + sub(std::string(k.str())));
    }
  }

  [[nodiscard]] ConfigError error(const std::string& key, const std::string& what) const {
    return ConfigError(sub(key) + " " + what);
  }

 private:
  const toml::node* node(const std::string& key, bool optional) {
    used_.insert(key);
    const auto* n = t_.get(key);
    if (!n && !optional) throw ConfigError("missing key " + sub(key));
    return n;
  }
  [[nodiscard]] std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const toml::table& t_;
  std::string path_;
  std::set<std::string> used_;
};

ShapeKind shape_kind(const std::string& s, const Table& t) {
  if (s == "box") return ShapeKind::kBox;
  if (s == "cylinder") return ShapeKind::kCylinder;
  if (s == "face") return ShapeKind::kFace;
  throw t.error("shape", "must be box, cylinder or face");
}

const char* shape_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::kBox: return "box";
    case ShapeKind::kCylinder: return "cylinder";
    case ShapeKind::kFace: return "face";
  }
  return "box";
}

BoundaryObject read_object(Table t, double T_inf) {
  BoundaryObject o;
  o.id = t.string("id");
  try {
    o.code = spacetree::cell_code_from_string(t.string("code"));
  } catch (const std::exception&) {
    throw t.error("code", "is not a cell type");
  }
  o.shape.kind = shape_kind(t.string("shape"), t);
  switch (o.shape.kind) {
    case ShapeKind::kBox: o.shape.box = t.box("box"); break;
    case ShapeKind::kCylinder:
      o.shape.center = t.numbers<3>("center");
      o.shape.radius = t.number("radius");
      o.shape.axis = t.integer("axis", 2);
      break;
    case ShapeKind::kFace: o.shape.face = t.integer("face"); break;
  }
  o.params.velocity = t.numbers<3>("velocity", Vec3{0, 0, 0});
  o.params.temperature = t.number("temperature", T_inf);
  if (t.has("profile")) {
    auto p = t.table("profile");
    o.profile.parabolic = true;
    o.profile.axis = p.integer("axis");
    o.profile.lo = p.number("lo");
    o.profile.hi = p.number("hi");
    p.finish();
  }
  t.finish();
  return o;
}

toml::array arr(const Vec3& v) { return toml::array{v[0], v[1], v[2]}; }
toml::array arr(const Index3& v) { return toml::array{v[0], v[1], v[2]}; }
toml::array arr(const Box& b) { return toml::array{b.lo[0], b.lo[1], b.lo[2], b.hi[0], b.hi[1], b.hi[2]}; }

void need(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

solver::DomainSetup RunConfig::setup() const {
  solver::DomainSetup st;
  st.geom = geom;
  st.refine = refine;
  st.fluid = fluid;
  st.params = params;
  st.objects = objects;
  st.u0 = u0;
  st.T0 = T0;
  return st;
}

void RunConfig::validate() const {
  geom.validate();
  fluid.validate();
  params.validate();
  need(ranks >= 1, "ranks must be >= 1");
  need(aggregators >= 0 && aggregators <= ranks, "aggregators must lie in [1, ranks] (0: one per rank)");
  need(std::isfinite(snapshot_interval) && snapshot_interval >= 0.0, "run.snapshot_interval must be >= 0");
  need(std::isfinite(end_time) && end_time > 0.0, "run.end_time must be > 0");
  need(!output.empty(), "run.output must name a file");
  for (std::size_t i = 0; i < refine.size(); ++i) {
    need(refine[i].depth >= 0 && refine[i].depth <= geom.max_depth,
         "refine[" + std::to_string(i) + "].depth must lie in [0, geometry.max_depth]");
  }
  std::set<std::string> ids;
  const int dims = geom.dims();
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const auto& o = objects[i];
    const auto at = "objects[" + std::to_string(i) + "]";
    need(!o.id.empty(), at + ".id must not be empty");
    need(ids.insert(o.id).second, at + ".id '" + o.id + "' is not unique");
    need(o.code != CellCode::kFluid, at + ".code must not be fluid");
    need(o.params.temperature > 0.0, at + ".temperature must be > 0 K");
    if (o.shape.kind == ShapeKind::kFace) need(o.shape.face >= 0 && o.shape.face < 2 * dims, at + ".face out of range");
    if (o.shape.kind == ShapeKind::kCylinder) {
      need(o.shape.radius > 0.0, at + ".radius must be > 0");
      need(o.shape.axis >= 0 && o.shape.axis < 3, at + ".axis must be 0, 1 or 2");
    }
    if (o.profile.parabolic) {
      need(o.profile.axis >= 0 && o.profile.axis < 3 && o.profile.hi > o.profile.lo, at + ".profile is degenerate");
    }
  }
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << source << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
    throw ConfigError(os.str());
  }
  Table t(root, "");
  RunConfig c;
  c.name = t.string("name", "");

  auto run = t.table("run");
  c.ranks = run.integer("ranks", 1);
  c.aggregators = run.integer("aggregators", 0);
  c.snapshot_interval = run.number("snapshot_interval", 0.0);
  c.end_time = run.number("end_time");
  c.output = run.string("output");
  run.finish();

  auto g = t.table("geometry");
  c.geom.r = g.ints3("r");
  c.geom.s = g.ints3("s");
  c.geom.max_depth = g.integer("max_depth");
  c.geom.domain = g.box("domain");
  g.finish();

  for (auto& r : t.tables("refine")) {
    c.refine.push_back({r.box("box"), r.integer("depth")});
    r.finish();
  }

  auto f = t.table("fluid", false);
  const solver::FluidProperties fd;
  c.fluid.rho_inf = f.number("rho_inf", fd.rho_inf);
  c.fluid.mu = f.number("mu", fd.mu);
  c.fluid.beta = f.number("beta", fd.beta);
  c.fluid.T_inf = f.number("T_inf", fd.T_inf);
  c.fluid.g = f.numbers<3>("g", fd.g);
  c.fluid.k_cond = f.number("k_cond", fd.k_cond);
  c.fluid.c_p = f.number("c_p", fd.c_p);
  c.fluid.q_int = f.number("q_int", fd.q_int);
  f.finish();

  auto s = t.table("solver", false);
  const solver::SolverParams sd;
  c.params.dt = s.number("dt", sd.dt);
  c.params.nu1 = s.integer("nu1", sd.nu1);
  c.params.nu2 = s.integer("nu2", sd.nu2);
  c.params.omega = s.number("omega", sd.omega);
  c.params.eps_mg = s.number("eps_mg", sd.eps_mg);
  c.params.max_cycles = s.integer("max_cycles", sd.max_cycles);
  c.params.cfl_limit = s.number("cfl_limit", sd.cfl_limit);
  c.params.coarse_sweeps = s.integer("coarse_sweeps", sd.coarse_sweeps);
  c.params.upwind = s.number("upwind", sd.upwind);
  c.params.parity = s.boolean("parity", sd.parity);
  c.params.wide_sweeps = s.integer("wide_sweeps", sd.wide_sweeps);
  s.finish();

  auto init = t.table("initial", false);
  c.u0 = init.numbers<3>("velocity", Vec3{0, 0, 0});
  if (init.has("temperature")) c.T0 = init.number("temperature");
  init.finish();

  for (auto& o : t.tables("objects")) c.objects.push_back(read_object(o, c.fluid.T_inf));
  t.finish();
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

std::string to_toml(const RunConfig& c) {
  // toml++ keeps keys sorted, which is the canonical order.
  toml::table root;
  if (!c.name.empty()) root.insert("name", c.name);
  root.insert("run", toml::table{{"ranks", c.ranks},
                                 {"aggregators", c.aggregators},
                                 {"snapshot_interval", c.snapshot_interval},
                                 {"end_time", c.end_time},
                                 {"output", c.output}});
  root.insert("geometry", toml::table{{"r", arr(c.geom.r)},
                                      {"s", arr(c.geom.s)},
                                      {"max_depth", c.geom.max_depth},
                                      {"domain", arr(c.geom.domain)}});
  if (!c.refine.empty()) {
    toml::array regions;
    for (const auto& r : c.refine) regions.push_back(toml::table{{"box", arr(r.box)}, {"depth", r.depth}});
    root.insert("refine", std::move(regions));
  }
  root.insert("fluid", toml::table{{"rho_inf", c.fluid.rho_inf},
                                   {"mu", c.fluid.mu},
                                   {"beta", c.fluid.beta},
                                   {"T_inf", c.fluid.T_inf},
                                   {"g", arr(c.fluid.g)},
                                   {"k_cond", c.fluid.k_cond},
                                   {"c_p", c.fluid.c_p},
                                   {"q_int", c.fluid.q_int}});
  root.insert("solver", toml::table{{"dt", c.params.dt},
                                    {"nu1", c.params.nu1},
                                    {"nu2", c.params.nu2},
                                    {"omega", c.params.omega},
                                    {"eps_mg", c.params.eps_mg},
                                    {"max_cycles", c.params.max_cycles},
                                    {"cfl_limit", c.params.cfl_limit},
                                    {"coarse_sweeps", c.params.coarse_sweeps},
                                    {"upwind", c.params.upwind},
                                    {"parity", c.params.parity},
                                    {"wide_sweeps", c.params.wide_sweeps}});
  toml::table init{{"velocity", arr(c.u0)}};
  if (c.T0) init.insert("temperature", *c.T0);
  root.insert("initial", std::move(init));
  if (!c.objects.empty()) {
    toml::array objs;
    for (const auto& o : c.objects) {
      toml::table t{{"id", o.id},
                    {"code", spacetree::to_string(o.code)},
                    {"shape", shape_name(o.shape.kind)},
                    {"velocity", arr(o.params.velocity)},
                    {"temperature", o.params.temperature}};
      switch (o.shape.kind) {
        case ShapeKind::kBox: t.insert("box", arr(o.shape.box)); break;
        case ShapeKind::kCylinder:
          t.insert("center", arr(o.shape.center));
          t.insert("radius", o.shape.radius);
          t.insert("axis", o.shape.axis);
          break;
        case ShapeKind::kFace: t.insert("face", o.shape.face); break;
      }
      if (o.profile.parabolic) {
        t.insert("profile", toml::table{{"axis", o.profile.axis}, {"lo", o.profile.lo}, {"hi", o.profile.hi}});
      }
      objs.push_back(std::move(t));
    }
    root.insert("objects", std::move(objs));
  }
  std::ostringstream os;
  os << root << "\n";
  return os.str();
}

}  // namespace trsflow::cli
