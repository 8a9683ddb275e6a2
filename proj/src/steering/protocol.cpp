#include "trsflow/steering/protocol.hpp"

#include "trsflow/solver/serialize.hpp"
#include "trsflow/steering/session.hpp"

namespace trsflow::steering {

using nlohmann::json;

namespace {

constexpr const char* kFieldNames[] = {"u", "v", "w", "p", "T"};

json vec(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

Vec3 vec_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw ProtocolError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json entry_to_json(const topology::WindowEntry& e) {
  return {{"uid", e.uid.hex()},
          {"depth", e.uid.depth()},
          {"stride", e.stride},
          {"bbox", box_to_json(e.bbox)},
          {"first", e.first},
          {"count", e.count}};
}

json selection_json(const topology::WindowSelection& sel, const std::vector<std::vector<std::vector<double>>>& values,
                    const std::vector<int>& fields) {
  json entries = json::array();
  for (std::size_t e = 0; e < sel.entries.size(); ++e) {
    auto j = entry_to_json(sel.entries[e]);
    json v = json::object();
    for (std::size_t f = 0; f < fields.size(); ++f) v[field_name(fields[f])] = values[e][f];
    j["values"] = std::move(v);
    entries.push_back(std::move(j));
  }
  json names = json::array();
  for (const int f : fields) names.push_back(field_name(f));
  return {{"level", sel.level},
          {"stride", sel.stride},
          {"point_count", sel.point_count},
          {"fields", names},
          {"entries", entries}};
}

json error(const std::string& message) { return {{"type", "error"}, {"message", message}}; }

std::vector<SteeringCommand> commands_from(const json& j) {
  std::vector<SteeringCommand> out;
  if (j.is_null()) return out;
  if (!j.is_array()) throw ProtocolError("commands must be an array");
  for (const auto& c : j) out.push_back(command_from_json(c));
  return out;
}

}  // namespace

int field_index(const std::string& name) {
  for (int i = 0; i < spacetree::kNumFields; ++i) {
    if (name == kFieldNames[i]) return i;
  }
  throw ProtocolError("unknown field '" + name + "'");
}

const char* field_name(int index) {
  if (index < 0 || index >= spacetree::kNumFields) throw ProtocolError("field index out of range");
  return kFieldNames[index];
}

Box box_from_json(const json& j) {
  if (j.is_array()) {
    if (j.size() != 6) throw ProtocolError("a box needs 6 numbers [x0,y0,z0,x1,y1,z1]");
    Box b;
    for (std::size_t a = 0; a < 3; ++a) {
      b.lo[a] = j[a].get<double>();
      b.hi[a] = j[a + 3].get<double>();
    }
    return b;
  }
  if (j.is_object()) return j.get<Box>();
  throw ProtocolError("a box is [x0,y0,z0,x1,y1,z1] or {lo, hi}");
}

json box_to_json(const Box& b) { return json::array({b.lo[0], b.lo[1], b.lo[2], b.hi[0], b.hi[1], b.hi[2]}); }

SteeringCommand command_from_json(const json& j) {
  if (!j.is_object()) throw ProtocolError("command must be an object");
  SteeringCommand c;
  try {
    c.kind = command_kind_from_string(j.at("kind").get<std::string>());
  } catch (const CommandRejected& e) {
    throw ProtocolError(e.what());
  }
  c.target = j.value("target", std::string());
  if (j.contains("object")) c.object = j.at("object").get<BoundaryObject>();
  if (j.contains("code")) c.code = j.at("code").get<CellCode>();
  if (j.contains("velocity")) c.velocity = vec_from(j.at("velocity"));
  if (j.contains("temperature")) c.temperature = j.at("temperature").get<double>();
  if (j.contains("offset")) c.offset = vec_from(j.at("offset"));
  if (j.contains("region")) c.region = box_from_json(j.at("region"));
  c.depth = j.value("depth", 0);
  return c;
}

json command_to_json(const SteeringCommand& c) {
  json j{{"kind", to_string(c.kind)}};
  if (!c.target.empty()) j["target"] = c.target;
  if (c.object) j["object"] = *c.object;
  if (c.code) j["code"] = *c.code;
  if (c.velocity) j["velocity"] = vec(*c.velocity);
  if (c.temperature) j["temperature"] = *c.temperature;
  if (c.kind == CommandKind::kMoveObstacle) j["offset"] = vec(c.offset);
  if (c.kind == CommandKind::kRefineRegion || c.kind == CommandKind::kCoarsenRegion) {
    j["region"] = box_to_json(c.region);
    j["depth"] = c.depth;
  }
  return j;
}

topology::WindowQuery window_query_from_json(const json& j) {
  topology::WindowQuery q;
  q.window = box_from_json(j.at("window"));
  q.budget = j.at("budget").get<std::int64_t>();
  if (q.budget < 1) throw ProtocolError("budget must be at least 1");
  if (j.contains("fields")) {
    q.fields.clear();
    for (const auto& f : j.at("fields")) q.fields.push_back(f.is_string() ? field_index(f.get<std::string>()) : f.get<int>());
    for (const int f : q.fields) (void)field_name(f);
  }
  return q;
}

json window_data_to_json(const WindowData& w) {
  auto j = selection_json(w.selection, w.values, w.query.fields);
  j["type"] = "window_data";
  j["source"] = "live";
  j["step"] = w.step;
  j["t"] = w.t;
  return j;
}

json handle_request(Session& s, const json& req) {
  json reply;
  try {
    if (!req.is_object() || !req.contains("type") || !req["type"].is_string()) {
      throw ProtocolError("request needs a string 'type'");
    }
    const auto type = req["type"].get<std::string>();
    if (type == "hello" || type == "status") {
      reply = s.with_simulation([&](solver::Simulation& sim) {
        const auto& g = sim.geometry();
        return json{{"dims", g.dims()},
                    {"domain", box_to_json(g.domain)},
                    {"r", g.r},
                    {"s", g.s},
                    {"max_depth", g.max_depth},
                    {"fields", json(kFieldNames)},
                    {"objects", sim.domain(0).objects},
                    {"step", sim.step()},
                    {"t", sim.time()}};
      });
      reply["type"] = type;
      reply["mode"] = to_string(s.mode());
      reply["file"] = s.active_file();
    } else if (type == "window_query") {
      const auto q = window_query_from_json(req);
      const bool offline = req.contains("t");
      if (!offline) {
        reply = window_data_to_json(s.window(q));
      } else {
        const auto file = req.value("file", std::string());
        const auto label = req["t"].is_string() ? req["t"].get<std::string>() : solver::time_label(req["t"].get<double>());
        const auto sel = s.window_at(file, label, q);
        reply = selection_json(sel.selection, sel.values, q.fields);
        reply["type"] = "window_data";
        reply["source"] = "file";
        reply["file"] = file.empty() ? s.active_file() : file;
        reply["t"] = label;
      }
    } else if (type == "command") {
      const auto cmd = command_from_json(req.at("command"));
      try {
        reply = {{"type", "ack"}, {"status", "queued"}, {"command_id", s.submit(cmd)}};
      } catch (const CommandRejected& e) {
        reply = {{"type", "ack"}, {"status", "rejected"}, {"reason", e.what()}};
      }
    } else if (type == "reload") {
      const auto label = req.at("t").is_string() ? req["t"].get<std::string>() : solver::time_label(req["t"].get<double>());
      const auto file = s.reload(req.value("file", std::string()), label, commands_from(req.value("commands", json())),
                                 req.value("branch_file", std::string()));
      reply = {{"type", "reloaded"}, {"file", file}, {"t", label}, {"mode", to_string(s.mode())}};
    } else if (type == "timesteps") {
      const auto file = req.value("file", std::string());
      reply = {{"type", "timesteps"}, {"file", file.empty() ? s.active_file() : file}, {"labels", s.timesteps(file)}};
    } else if (type == "branches") {
      json nodes = json::array();
      for (const auto& n : s.branches()) {
        nodes.push_back({{"file", n.file},
                         {"parent", n.parent.empty() ? json() : json(n.parent)},
                         {"branch_time", n.branch_time},
                         {"labels", n.labels},
                         {"active", n.active}});
      }
      reply = {{"type", "branches"}, {"nodes", nodes}};
    } else if (type == "pause" || type == "resume") {
      if (type == "pause") {
        s.pause();
      } else {
        s.resume();
      }
      reply = {{"type", "state"}, {"mode", to_string(s.mode())}};
    } else {
      throw ProtocolError("unknown request type '" + type + "'");
    }
  } catch (const std::exception& e) {
    reply = error(e.what());
  }
  if (req.is_object() && req.contains("id")) reply["id"] = req["id"];
  return reply;
}

json handle_frame(Session& s, const std::string& payload) {
  json req;
  try {
    req = json::parse(payload);
  } catch (const json::parse_error& e) {
    return error(std::string("malformed JSON: ") + e.what());
  }
  return handle_request(s, req);
}

}  // namespace trsflow::steering
