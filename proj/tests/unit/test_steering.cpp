#include <doctest.h>

#include <unistd.h>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <filesystem>
#include <future>
#include <random>
#include <set>

#include "trsflow/steering/gateway.hpp"
#include "trsflow/steering/protocol.hpp"
#include "trsflow/steering/session.hpp"

using namespace trsflow;
using namespace trsflow::steering;
using nlohmann::json;
using solver::DomainSetup;
using solver::ShapeKind;
using spacetree::CellCode;
using spacetree::Location;

namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    static int n = 0;
    dir_ = fs::temp_directory_path() / ("trsflow_steer_" + std::to_string(::getpid()) + "_" + std::to_string(n++));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  ~TempDir() { fs::remove_all(dir_); }
  [[nodiscard]] std::string operator/(const std::string& name) const { return (dir_ / name).string(); }

 private:
  fs::path dir_;
};

BoundaryObject face(const std::string& id, int f, CellCode code, Vec3 vel = {0, 0, 0}) {
  BoundaryObject o;
  o.id = id;
  o.shape.kind = ShapeKind::kFace;
  o.shape.face = f;
  o.code = code;
  o.params.velocity = vel;
  o.params.temperature = 293.15;
  return o;
}

BoundaryObject box_object(const std::string& id, Box b, CellCode code = CellCode::kObstacle) {
  BoundaryObject o;
  o.id = id;
  o.shape.kind = ShapeKind::kBox;
  o.shape.box = b;
  o.code = code;
  o.params.temperature = 293.15;
  return o;
}

// 2x1 channel, uniform depth 1, inflow west, outflow east, one block.
DomainSetup channel(int depth = 1) {
  DomainSetup st;
  st.geom.r = {2, 2, 1};
  st.geom.s = {8, 4, 1};
  st.geom.max_depth = 3;
  st.geom.domain = Box{{0, 0, 0}, {2, 1, 0.1}};
  st.refine.push_back({st.geom.domain, depth});
  st.fluid.mu = 1e-2;
  st.params.dt = 5e-3;
  st.objects = {face("inlet", 0, CellCode::kInflow, {1, 0, 0}), face("outlet", 1, CellCode::kOutflow),
                box_object("block", Box{{0.5, 0.375, 0}, {0.75, 0.625, 1}})};
  return st;
}

std::map<Location, std::vector<CellCode>> leaf_codes(const solver::Simulation& sim) {
  std::map<Location, std::vector<CellCode>> out;
  for (int r = 0; r < sim.ranks(); ++r) {
    const auto& d = sim.domain(r);
    for (std::size_t i = 0; i < d.grids.size(); ++i) {
      if (!d.is_leaf(i)) continue;
      auto& v = out[d.grids[i].location()];
      for (std::int64_t lin = 0; lin < d.grids[i].cells(); ++lin) v.push_back(d.grids[i].code(d.grids[i].layout().interior(lin)));
    }
  }
  return out;
}

template <class F>
void for_leaf_cells(const solver::Simulation& sim, F&& f) {
  for (int r = 0; r < sim.ranks(); ++r) {
    const auto& d = sim.domain(r);
    for (std::size_t i = 0; i < d.grids.size(); ++i) {
      if (!d.is_leaf(i)) continue;
      const auto& g = d.grids[i];
      const auto& s = g.layout().s();
      for (int k = 0; k < s[2]; ++k) {
        for (int j = 0; j < s[1]; ++j) {
          for (int x = 0; x < s[0]; ++x) f(g, g.layout().idx(x, j, k), solver::cell_center(g, x, j, k));
        }
      }
    }
  }
}

SteeringCommand add_box(const std::string& id, Box b) {
  SteeringCommand c;
  c.kind = CommandKind::kAddObstacle;
  c.object = box_object(id, b);
  return c;
}

SteeringCommand move(const std::string& id, Vec3 off) {
  SteeringCommand c;
  c.kind = CommandKind::kMoveObstacle;
  c.target = id;
  c.offset = off;
  return c;
}

SteeringCommand region_cmd(CommandKind k, Box b, int depth) {
  SteeringCommand c;
  c.kind = k;
  c.region = b;
  c.depth = depth;
  return c;
}

bool states_equal(const solver::Simulation& a, const solver::Simulation& b) {
  std::map<Location, const spacetree::DGrid*> gb;
  for (int r = 0; r < b.ranks(); ++r) {
    for (const auto& g : b.domain(r).grids) gb[g.location()] = &g;
  }
  std::size_t n = 0;
  for (int r = 0; r < a.ranks(); ++r) {
    for (const auto& g : a.domain(r).grids) {
      const auto it = gb.find(g.location());
      if (it == gb.end() || !g.interior_equal(*it->second)) return false;
      ++n;
    }
  }
  return n == gb.size();
}

}  // namespace

TEST_CASE("add obstacle turns covered cells into obstacles at rest") {
  solver::Simulation sim(channel(), 2);
  sim.advance(3);
  const Box b{{1.2, 0.2, 0}, {1.5, 0.6, 1}};
  apply(sim, add_box("new", b));
  int covered = 0;
  for_leaf_cells(sim, [&](const spacetree::DGrid& g, std::ptrdiff_t p, const Vec3& c) {
    if (!b.contains(c)) return;
    ++covered;
    CHECK(g.code(p) == CellCode::kObstacle);
    CHECK(g.current.at(0, p) == 0.0);
    CHECK(g.current.at(1, p) == 0.0);
  });
  CHECK(covered > 0);
  sim.advance(2);
}

TEST_CASE("moving an obstacle and moving it back restores every cell type") {
  solver::Simulation sim(channel(2), 3);
  const auto before = leaf_codes(sim);
  apply(sim, move("block", {0.25, 0.125, 0}));
  CHECK(leaf_codes(sim) != before);
  sim.advance(2);
  apply(sim, move("block", {-0.25, -0.125, 0}));
  CHECK(leaf_codes(sim) == before);
}

TEST_CASE("obstacles overlapping the inflow are rejected with a reason") {
  solver::Simulation sim(channel(), 1);
  const auto why = validate(add_box("bad", Box{{0, 0.2, 0}, {0.3, 0.4, 1}}), sim);
  REQUIRE(why);
  CHECK(why->find("inflow") != std::string::npos);
  CHECK_THROWS_AS(apply(sim, move("block", {-0.6, 0, 0})), CommandRejected);
  CHECK(validate(add_box("block", Box{{1, 0.2, 0}, {1.2, 0.4, 1}}), sim));  // duplicate id
  CHECK(validate(move("nothing", {0.1, 0, 0}), sim));
  CHECK(validate(region_cmd(CommandKind::kRefineRegion, Box{{0, 0, 0}, {1, 1, 1}}, 9), sim));
}

TEST_CASE("refining a region adds (r^d - 1) leaves per refined leaf") {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int trial = 0; trial < 6; ++trial) {
    solver::Simulation sim(channel(1), 1 + trial % 3);
    const double x = 2 * U(rng) * 0.8, y = U(rng) * 0.8;
    const Box R{{x, y, 0}, {x + 0.3, y + 0.3, 1}};
    // Independent count: depth-1 leaves of the uniform tree whose box overlaps R.
    std::size_t in_r = 0;
    spacetree::SpaceTree t = spacetree::SpaceTree::uniform(sim.geometry(), 1);
    for (const auto loc : t.leaves()) in_r += sim.geometry().bbox(loc).overlaps(R) ? 1 : 0;
    const auto before = leaf_count(sim);
    apply(sim, region_cmd(CommandKind::kRefineRegion, R, 2));
    CHECK(leaf_count(sim) == before + 3 * in_r);
    sim.advance(2);
    apply(sim, region_cmd(CommandKind::kCoarsenRegion, sim.geometry().domain, 1));
    CHECK(leaf_count(sim) == before);
    sim.advance(1);
  }
}

TEST_CASE("refinement keeps a uniform state uniform") {
  auto st = channel(1);
  st.objects.clear();
  st.T0 = 300.0;
  solver::Simulation sim(st, 2);
  apply(sim, region_cmd(CommandKind::kRefineRegion, Box{{0.4, 0.1, 0}, {1.3, 0.7, 1}}, 3));
  for_leaf_cells(sim, [&](const spacetree::DGrid& g, std::ptrdiff_t p, const Vec3&) {
    CHECK(g.current.at(4, p) == 300.0);
    CHECK(g.current.at(0, p) == 0.0);
  });
  sim.advance(2);
  for_leaf_cells(sim, [&](const spacetree::DGrid& g, std::ptrdiff_t p, const Vec3&) {
    CHECK(g.current.at(4, p) == doctest::Approx(300.0));
    CHECK(std::abs(g.current.at(0, p)) < 1e-9);
  });
}

TEST_CASE("coarsening that would empty a rank is rejected") {
  solver::Simulation sim(channel(1), 5);
  CHECK_THROWS_AS(apply(sim, region_cmd(CommandKind::kCoarsenRegion, sim.geometry().domain, 0)), CommandRejected);
  CHECK(leaf_count(sim) == 4);
}

TEST_CASE("collector returns the quiescent state within the budget") {
  auto st = channel(2);
  st.objects.clear();
  st.T0 = 291.0;
  solver::Simulation sim(st, 3);
  Collector col(sim);
  topology::WindowQuery q;
  q.window = sim.geometry().domain;
  q.budget = 1000000;
  const auto w = col.query(q);
  CHECK(w.selection.level == 2);
  std::int64_t points = 0;
  for (std::size_t e = 0; e < w.values.size(); ++e) {
    for (int f = 0; f < 5; ++f) {
      for (const double v : w.values[e][static_cast<std::size_t>(f)]) CHECK(v == (f == 4 ? 291.0 : 0.0));
    }
    points += static_cast<std::int64_t>(w.values[e][0].size());
  }
  CHECK(points == w.point_count());
  CHECK(points == 16 * 8 * 4);
  std::mt19937 rng(5);
  for (int i = 0; i < 50; ++i) {
    q.budget = 1 + static_cast<std::int64_t>(rng() % 300);
    const auto wi = col.query(q);
    CHECK(wi.point_count() <= q.budget);
  }
}

TEST_CASE("session snapshots, commands at step boundaries and paused idempotence") {
  TempDir tmp;
  SessionOptions opt;
  opt.output = tmp / "run.h5";
  opt.snapshot_interval = 0.01;
  opt.end_time = 0.05;
  Session s(channel(), 2, opt);
  std::vector<json> events;
  std::mutex m;
  s.subscribe([&](const json& ev) {
    std::lock_guard lock(m);
    events.push_back(ev);
  });
  s.step();
  const auto id = s.submit(add_box("late", Box{{1.2, 0.2, 0}, {1.5, 0.6, 1}}));
  // Queued, not applied: the window still shows fluid there.
  topology::WindowQuery q;
  q.window = Box{{1.25, 0.25, 0}, {1.45, 0.55, 1}};
  q.budget = 1000;
  q.fields = {0};
  const auto a = s.window(q);
  const auto b = s.window(q);
  CHECK(a.values == b.values);
  CHECK(a.selection == b.selection);
  s.run_to_end();
  CHECK(s.finished());
  CHECK_FALSE(s.step());
  CHECK(s.timesteps() == std::vector<std::string>{"0.010000", "0.020000", "0.030000", "0.040000", "0.050000"});
  const auto after = s.window(q);
  for (const double v : after.values.at(0).at(0)) CHECK(v == 0.0);
  std::lock_guard lock(m);
  int steps = 0;
  bool applied_before_second_step = false;
  for (const auto& ev : events) {
    if (ev["type"] == "event") ++steps;
    if (ev["type"] == "command_status" && ev["status"] == "applied" && ev["command_id"] == id) {
      applied_before_second_step = steps == 1;
    }
  }
  CHECK(steps == 10);
  CHECK(applied_before_second_step);
}

TEST_CASE("reload branches leave ancestors untouched and form the issued tree") {
  TempDir tmp;
  SessionOptions opt;
  opt.output = tmp / "root.h5";
  opt.snapshot_interval = 0.01;
  opt.end_time = 0.03;
  Session s(channel(), 2, opt);
  s.run_to_end();
  const auto root = s.active_file();
  const auto root_hash = ckptio::file_hash(root);

  SUBCASE("reload latest without commands reproduces the snapshot") {
    const auto b = s.reload(root, "0.030000", {});
    CHECK(s.mode() == Mode::kPaused);
    const auto snap = ckptio::load_simulation(root, "0.030000", 2);
    CHECK(s.with_simulation([&](solver::Simulation& sim) { return states_equal(sim, snap); }));
    CHECK(ckptio::file_hash(root) == root_hash);
    CHECK(s.timesteps(b) == std::vector<std::string>{"0.030000"});
  }
  SUBCASE("three branches at one time") {
    std::vector<std::string> files;
    for (int k = 0; k < 3; ++k) {
      files.push_back(s.reload(root, "0.020000", {move("block", {0.125 * (k + 1), 0, 0})}));
      s.set_end_time(0.03);
      s.run_to_end();
    }
    CHECK(ckptio::file_hash(root) == root_hash);
    CHECK(std::set<std::string>(files.begin(), files.end()).size() == 3);
    const auto snap = ckptio::load_simulation(root, "0.020000", 2);
    for (const auto& f : files) {
      CHECK(states_equal(ckptio::load_simulation(f, "0.020000", 2), snap));
      CHECK(s.timesteps(f) == std::vector<std::string>{"0.020000", "0.030000"});
    }
    CHECK_FALSE(states_equal(ckptio::load_simulation(files[0], "0.030000", 2),
                             ckptio::load_simulation(files[1], "0.030000", 2)));
    // A branch of a branch.
    const auto nested = s.reload(files[1], "0.030000", {});
    const auto nodes = s.branches();
    REQUIRE(nodes.size() == 5);
    std::map<std::string, std::string> parent;
    for (const auto& n : nodes) parent[n.file] = n.parent;
    CHECK(parent[root].empty());
    for (const auto& f : files) CHECK(parent[f] == root);
    CHECK(parent[nested] == files[1]);
    CHECK(nodes.back().active);
    // Acyclic: every walk reaches the root.
    for (const auto& n : nodes) {
      std::string at = n.file;
      for (std::size_t hops = 0; !parent[at].empty(); ++hops) {
        REQUIRE(hops < nodes.size());
        at = parent[at];
      }
      CHECK(at == root);
    }
  }
  SUBCASE("missing snapshot") {
    CHECK_THROWS(s.reload(root, "0.015000", {}));
    CHECK(s.branches().size() == 1);
  }
}

TEST_CASE("resume appends only from the latest snapshot") {
  TempDir tmp;
  SessionOptions opt;
  opt.output = tmp / "r.h5";
  opt.snapshot_interval = 0.01;
  opt.end_time = 0.02;
  {
    Session s(channel(), 2, opt);
    s.run_to_end();
  }
  const auto path = tmp / "r.h5";
  const auto h = ckptio::file_hash(path);
  SessionOptions more = opt;
  more.end_time = 0.02;
  {
    auto s = Session::resume(path, "0.020000", 2, more, false);
    s->run_to_end();
  }
  CHECK(ckptio::file_hash(path) == h);
  CHECK_THROWS_AS(Session::resume(path, "0.010000", 2, more, false), SessionError);
  more.end_time = 0.02;
  auto b = Session::resume(path, "0.010000", 2, more, true);
  b->run_to_end();
  CHECK(b->timesteps() == std::vector<std::string>{"0.010000", "0.020000"});
  CHECK(ckptio::file_hash(path) == h);
  CHECK(b->branches().size() == 2);
}

TEST_CASE("protocol requests") {
  TempDir tmp;
  SessionOptions opt;
  opt.output = tmp / "p.h5";
  opt.snapshot_interval = 0.01;
  opt.end_time = 0.02;
  Session s(channel(), 1, opt);
  s.run_to_end();
  auto r = handle_request(s, {{"type", "timesteps"}, {"id", 7}});
  CHECK(r["type"] == "timesteps");
  CHECK(r["id"] == 7);
  CHECK(r["labels"].get<std::vector<std::string>>() == ckptio::CheckpointFile::open_readonly(s.active_file()).list_timesteps());
  CHECK(handle_frame(s, "{not json")["type"] == "error");
  CHECK(handle_request(s, {{"type", "warp"}})["type"] == "error");
  CHECK(handle_request(s, {{"type", "window_query"}, {"window", {0, 0, 0}}, {"budget", 5}})["type"] == "error");

  r = handle_request(s, json::parse(R"({"type": "command", "command": {"kind": "add_obstacle", "object": {
      "id": "bad", "code": "obstacle", "shape": {"kind": "box", "box": {"lo": [0, 0, 0], "hi": [0.2, 0.5, 1]}}}}})"));
  CHECK(r["type"] == "ack");
  CHECK(r["status"] == "rejected");
  CHECK(r["reason"].get<std::string>().find("inflow") != std::string::npos);

  const auto cmd = move("block", {0.25, 0, 0});
  CHECK(command_from_json(command_to_json(cmd)) == cmd);
  const auto refine = region_cmd(CommandKind::kRefineRegion, Box{{0, 0, 0}, {1, 1, 1}}, 2);
  CHECK(command_from_json(command_to_json(refine)) == refine);

  // Live and offline answers agree at the latest snapshot.
  const json q{{"type", "window_query"}, {"window", {0.1, 0.1, 0, 1.9, 0.9, 0.1}}, {"budget", 100}, {"fields", {"u", "T"}}};
  auto live = handle_request(s, q);
  auto off_req = q;
  off_req["t"] = "0.020000";
  auto off = handle_request(s, off_req);
  CHECK(live["type"] == "window_data");
  CHECK(live["entries"] == off["entries"]);
  CHECK(live["point_count"].get<int>() <= 100);
}

namespace {

namespace asio = boost::asio;
namespace websocket = boost::beast::websocket;

class WsClient {
 public:
  explicit WsClient(std::uint16_t port) : ws_(ioc_) {
    asio::ip::tcp::resolver res(ioc_);
    asio::connect(ws_.next_layer(), res.resolve("127.0.0.1", std::to_string(port)));
    ws_.handshake("127.0.0.1", "/");
  }
  json request(json msg) {
    msg["id"] = "ws-" + std::to_string(next_++);
    ws_.write(asio::buffer(msg.dump()));
    for (;;) {
      boost::beast::flat_buffer buf;
      ws_.read(buf);
      auto m = json::parse(boost::beast::buffers_to_string(buf.data()));
      if (m.contains("id") && m["id"] == msg["id"]) return m;
    }
  }

 private:
  asio::io_context ioc_;
  websocket::stream<asio::ip::tcp::socket> ws_;
  int next_ = 1;
};

}  // namespace

TEST_CASE("gateway serves TCP and WebSocket clients on one port") {
  TempDir tmp;
  SessionOptions opt;
  opt.output = tmp / "g.h5";
  opt.snapshot_interval = 0.01;
  opt.end_time = 0.04;
  Session s(channel(2), 2, opt);
  s.start();
  Gateway gw(s);

  GatewayClient tcp("127.0.0.1", gw.port());
  auto hello = tcp.request({{"type", "hello"}});
  CHECK(hello["dims"] == 2);
  CHECK(hello["mode"] == "paused");

  // Malformed frames get an error reply and the connection stays usable.
  const std::string junk = "{oops";
  tcp.send_raw(std::string("\0\0\0\x05", 4) + junk);
  CHECK(tcp.receive()["type"] == "error");
  CHECK(tcp.request({{"type", "status"}})["type"] == "status");

  CHECK(tcp.request({{"type", "subscribe"}})["type"] == "subscribed");
  CHECK(tcp.request({{"type", "resume"}})["mode"] == "running");
  int steps = 0;
  std::int64_t last = 0;
  while (steps < 8) {
    auto m = tcp.receive();
    if (m["type"] == "event") {
      ++steps;
      CHECK(m["step"].get<std::int64_t>() == last + 1);
      last = m["step"].get<std::int64_t>();
    }
  }
  CHECK(tcp.request({{"type", "pause"}})["mode"] == "paused");

  // Two clients, disjoint windows, answered concurrently.
  WsClient ws(gw.port());
  const json qa{{"type", "window_query"}, {"window", {0, 0, 0, 0.9, 1, 0.1}}, {"budget", 200}, {"fields", {"u"}}};
  const json qb{{"type", "window_query"}, {"window", {1.1, 0, 0, 2, 1, 0.1}}, {"budget", 50}, {"fields", {"p", "v"}}};
  auto fa = std::async(std::launch::async, [&] { return tcp.request(qa); });
  auto fb = std::async(std::launch::async, [&] { return ws.request(qb); });
  const auto ra = fa.get();
  const auto rb = fb.get();
  CHECK(ra["type"] == "window_data");
  CHECK(rb["type"] == "window_data");
  CHECK(ra["point_count"].get<int>() <= 200);
  CHECK(rb["point_count"].get<int>() <= 50);
  CHECK(ra["fields"] == json({"u"}));
  CHECK(rb["fields"] == json({"p", "v"}));
  CHECK(ra["step"] == rb["step"]);
  auto again = handle_request(s, qa);
  again.erase("id");
  auto ra_copy = ra;
  ra_copy.erase("id");
  CHECK(again == ra_copy);

  const auto ts = ws.request({{"type", "timesteps"}});
  CHECK(ts["labels"].get<std::vector<std::string>>() == s.timesteps());
  const auto br = ws.request({{"type", "reload"}, {"t", ts["labels"][0]}});
  CHECK(br["type"] == "reloaded");
  CHECK(ws.request({{"type", "branches"}})["nodes"].size() == 2);
  gw.stop();
  s.stop();
}
