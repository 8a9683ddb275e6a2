#include "trsflow/cli/runner.hpp"

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "trsflow/ckptio/checkpoint.hpp"
#include "trsflow/solver/stepper.hpp"
#include "trsflow/steering/gateway.hpp"
#include "trsflow/steering/protocol.hpp"

namespace trsflow::cli {

namespace fs = std::filesystem;
using ckptio::CheckpointFile;
using steering::Session;
using steering::SessionOptions;
using spacetree::Index3;
using spacetree::Vec3;

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void print_snapshot(std::ostream& log, const steering::SnapshotRecord& r, std::int64_t step) {
  const double mbs = r.stats.seconds > 0.0 ? static_cast<double>(r.stats.total_bytes) / r.stats.seconds / 1e6 : 0.0;
  log << "snapshot t=" << r.label << " step=" << step << " bytes=" << r.stats.total_bytes
      << " seconds=" << fmt("%.4f", r.stats.seconds) << " MB/s=" << fmt("%.1f", mbs) << " file=" << r.file << std::endl;
}

RunResult drive(Session& s, std::ostream& log, const std::atomic<bool>* stop) {
  RunResult out;
  std::size_t printed = s.snapshots().size();
  for (const auto& r : s.snapshots()) print_snapshot(log, r, s.step_count());
  const auto start = s.step_count();
  while (!(stop && stop->load())) {
    if (!s.step()) break;
    const auto snaps = s.snapshots();
    for (; printed < snaps.size(); ++printed) print_snapshot(log, snaps[printed], s.step_count());
  }
  out.file = s.active_file();
  out.snapshots = s.snapshots();
  out.steps = s.step_count() - start;
  out.t = s.time();
  out.interrupted = !s.finished();
  if (out.interrupted) log << "interrupted at t=" << solver::time_label(out.t) << std::endl;
  return out;
}

SessionOptions session_options(const RunConfig& cfg, bool overwrite) {
  SessionOptions o;
  o.output = cfg.output;
  o.snapshot_interval = cfg.snapshot_interval;
  o.end_time = cfg.end_time;
  o.aggregators = cfg.aggregators;
  o.overwrite = overwrite;
  return o;
}

std::uint64_t mem_available() {
  std::ifstream in("/proc/meminfo");
  std::string key;
  std::uint64_t kb = 0;
  std::string unit;
  while (in >> key >> kb >> unit) {
    if (key == "MemAvailable:") return kb * 1024;
  }
  return UINT64_MAX;
}

}  // namespace

RunResult run(const RunConfig& cfg, std::ostream& log, const std::atomic<bool>* stop, bool overwrite) {
  cfg.validate();
  Session s(cfg.setup(), cfg.ranks, session_options(cfg, overwrite));
  log << "run " << (cfg.name.empty() ? "<unnamed>" : cfg.name) << ": " << cfg.ranks << " ranks, "
      << s.with_simulation([](solver::Simulation& sim) {
        std::size_t n = 0;
        for (const auto& d : sim.domains()) n += d.grids.size();
        return n;
      }) << " grids, until t="
      << solver::time_label(cfg.end_time) << " -> " << s.active_file() << std::endl;
  return drive(s, log, stop);
}

RunResult resume(const ResumeOptions& opt, std::ostream& log, const std::atomic<bool>* stop) {
  SessionOptions so;
  so.output = opt.output;
  so.snapshot_interval = opt.snapshot_interval;
  so.end_time = opt.end_time ? *opt.end_time : std::stod(opt.label);
  so.aggregators = opt.aggregators;
  auto s = Session::resume(opt.file, opt.label, opt.ranks, so, opt.branch);
  log << "resume " << opt.file << " at t=" << opt.label << " -> " << s->active_file() << ", until t="
      << solver::time_label(so.end_time) << std::endl;
  return drive(*s, log, stop);
}

void serve(const RunConfig& cfg, std::uint16_t port, const std::atomic<bool>& stop, std::ostream& log,
           bool overwrite, const std::string& address) {
  cfg.validate();
  Session s(cfg.setup(), cfg.ranks, session_options(cfg, overwrite));
  steering::Gateway gw(s, port, address);
  log << "gateway listening on " << address << ":" << gw.port() << ", writing " << s.active_file() << std::endl;
  s.start();
  s.resume();
  while (!stop.load()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  gw.stop();
  s.stop();
  log << "stopped at t=" << solver::time_label(s.time()) << std::endl;
}

std::uint16_t gateway_port_from_env(std::uint16_t fallback) {
  const char* v = std::getenv("TRSFLOW_GATEWAY_PORT");
  if (!v || !*v) return fallback;
  char* end = nullptr;
  const long p = std::strtol(v, &end, 10);
  if (*end != '\0' || p < 0 || p > 65535) throw ConfigError("TRSFLOW_GATEWAY_PORT must be a port number");
  return static_cast<std::uint16_t>(p);
}

// ---- bench ----------------------------------------------------------------

std::uint64_t analytic_snapshot_bytes(std::int64_t n, std::int64_t cells, int children, std::int64_t m) {
  const auto per_grid = 3 * cells * 5 * 8 + cells * 4 + 6 * 8 + (1 + children) * 8;
  return static_cast<std::uint64_t>(n * per_grid + m * 6 * 8);
}

std::vector<BenchRow> bench(const RunConfig& cfg, const BenchOptions& opt, std::ostream& log) {
  cfg.validate();
  const int depth = opt.depth < 0 ? cfg.geom.max_depth : opt.depth;
  if (depth > cfg.geom.max_depth) throw ConfigError("bench depth exceeds geometry.max_depth");
  const fs::path dir = opt.dir.empty() ? fs::temp_directory_path() : fs::path(opt.dir);
  fs::create_directories(dir);

  auto setup = cfg.setup();
  setup.refine = {{cfg.geom.domain, depth}};
  const int group = cfg.geom.children_per_grid();
  const std::int64_t cells = cfg.geom.cells_per_grid();
  std::int64_t grids = 0;
  for (std::int64_t k = 0, level = 1; k <= depth; ++k, level *= group) grids += level;
  const Index3 pad{cfg.geom.s[0] + 2, cfg.geom.s[1] + 2, cfg.geom.dims() == 3 ? cfg.geom.s[2] + 2 : 1};

  std::vector<BenchRow> rows;
  for (const int P : opt.ranks) {
    BenchRow base;
    base.ranks = P;
    base.grids = grids;
    base.cells = grids * cells;
    auto skip_all = [&](const std::string& why) {
      for (const int A : opt.aggregators) {
        auto r = base;
        r.aggregators = A == 0 ? P : A;
        r.note = why;
        rows.push_back(r);
        log << "bench P=" << P << " A=" << r.aggregators << ": skipped (" << why << ")" << std::endl;
      }
    };
    if (P < 1 || P > grids) {
      skip_all("needs 1 <= P <= grid count");
      continue;
    }
    // Three cell buffers plus solver work arrays, and the write buffers.
    const std::uint64_t need = static_cast<std::uint64_t>(grids) * pad[0] * pad[1] * pad[2] * 5 * 8 * 7 +
                               analytic_snapshot_bytes(grids, cells, group, 0) / static_cast<std::uint64_t>(P) * 2;
    const auto avail = mem_available();
    if (need > avail) {
      skip_all("needs about " + std::to_string(need >> 20) + " MiB, " + std::to_string(avail >> 20) + " MiB available");
      continue;
    }
    solver::Simulation sim(setup, P);
    std::int64_t m = 0;
    for (const auto& d : sim.domains()) {
      for (const auto& g : d.grids) {
        for (std::int64_t lin = 0; lin < g.cells(); ++lin) m += g.params(lin) ? 1 : 0;
      }
    }
    const ckptio::CommonParams common{setup.geom, setup.fluid, setup.params};
    for (const int A0 : opt.aggregators) {
      auto r = base;
      r.aggregators = A0 == 0 ? P : A0;
      if (r.aggregators < 1 || r.aggregators > P) {
        r.note = "needs 1 <= A <= P";
        rows.push_back(r);
        log << "bench P=" << P << " A=" << r.aggregators << ": skipped (" << r.note << ")" << std::endl;
        continue;
      }
      const auto path = (dir / ("bench_P" + std::to_string(P) + "_A" + std::to_string(r.aggregators) + ".h5")).string();
      std::vector<ckptio::WriteStats> stats(static_cast<std::size_t>(P));
      sim.spmd([&](comm::Communicator& c, solver::RankDomain& d) {
        auto f = CheckpointFile::create(path, common, c, {true});
        stats[static_cast<std::size_t>(c.rank())] = ckptio::write_snapshot(f, d, c, {r.aggregators});
        f.close();
      });
      for (const auto& s : stats) r.seconds = std::max(r.seconds, s.seconds);
      r.bytes = stats[0].total_bytes;
      r.analytic_bytes = analytic_snapshot_bytes(grids, cells, group, m);
      r.file_bytes = fs::file_size(path);
      r.mb_per_s = r.seconds > 0.0 ? static_cast<double>(r.bytes) / r.seconds / 1e6 : 0.0;
      r.sha256 = ckptio::file_hash(path);
      if (!opt.keep_files) fs::remove(path);
      log << "bench P=" << P << " A=" << r.aggregators << ": " << r.bytes << " bytes in " << fmt("%.4f", r.seconds)
          << " s, " << fmt("%.1f", r.mb_per_s) << " MB/s" << std::endl;
      rows.push_back(r);
    }
  }
  return rows;
}

void write_bench_csv(const std::vector<BenchRow>& rows, std::ostream& out) {
  out << "ranks,aggregators,grids,cells,bytes,analytic_bytes,file_bytes,seconds,mb_per_s,sha256,note\n";
  for (const auto& r : rows) {
    out << r.ranks << ',' << r.aggregators << ',' << r.grids << ',' << r.cells << ',' << r.bytes << ','
        << r.analytic_bytes << ',' << r.file_bytes << ',' << fmt("%.6f", r.seconds) << ',' << fmt("%.3f", r.mb_per_s)
        << ',' << r.sha256 << ',' << r.note << '\n';
  }
}

void write_bench_table(const std::vector<BenchRow>& rows, std::ostream& out) {
  std::map<int, std::map<int, const BenchRow*>> grid;
  std::map<int, bool> cols;
  for (const auto& r : rows) {
    grid[r.ranks][r.aggregators] = &r;
    cols[r.aggregators] = true;
  }
  out << std::setw(6) << "P\\A";
  for (const auto& [a, _] : cols) out << std::setw(12) << a;
  out << "   (MB/s)\n";
  for (const auto& [p, row] : grid) {
    out << std::setw(6) << p;
    for (const auto& [a, _] : cols) {
      const auto it = row.find(a);
      out << std::setw(12) << (it == row.end() || !it->second->note.empty() ? "-" : fmt("%.1f", it->second->mb_per_s));
    }
    out << '\n';
  }
}

// ---- inspect --------------------------------------------------------------

void write_window_csv(const spacetree::GridGeometry& geom, const topology::WindowSelection& sel,
                      const std::vector<std::vector<std::vector<double>>>& values, const std::vector<int>& fields,
                      std::ostream& out) {
  out << "uid,depth,i,j,k,x,y,z";
  for (const int f : fields) out << ',' << steering::field_name(f);
  out << '\n';
  char buf[32];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  };
  for (std::size_t e = 0; e < sel.entries.size(); ++e) {
    const auto& en = sel.entries[e];
    Vec3 h{};
    for (int a = 0; a < 3; ++a) h[a] = en.bbox.extent(a) / geom.s[a];
    std::size_t at = 0;
    for (int kk = 0; kk < en.count[2]; ++kk) {
      for (int jj = 0; jj < en.count[1]; ++jj) {
        for (int ii = 0; ii < en.count[0]; ++ii, ++at) {
          const Index3 c{en.first[0] + ii * en.stride, en.first[1] + jj * en.stride,
                         geom.s[2] == 1 ? 0 : en.first[2] + kk * en.stride};
          out << en.uid.hex() << ',' << en.uid.depth() << ',' << c[0] << ',' << c[1] << ',' << c[2];
          for (int a = 0; a < 3; ++a) out << ',' << num(en.bbox.lo[a] + (c[a] + 0.5) * h[a]);
          for (std::size_t f = 0; f < fields.size(); ++f) out << ',' << num(values[e][f][at]);
          out << '\n';
        }
      }
    }
  }
}

void inspect(const std::string& file, const InspectOptions& opt, std::ostream& out) {
  const auto f = CheckpointFile::open_readonly(file);
  const auto& geom = f.common().geom;
  out << "file: " << f.path() << "\n";
  out << "geometry: r=" << geom.r[0] << 'x' << geom.r[1] << 'x' << geom.r[2] << " s=" << geom.s[0] << 'x' << geom.s[1]
      << 'x' << geom.s[2] << " max_depth=" << geom.max_depth << " dt=" << f.common().params.dt << "\n";
  // Ancestry: parent, grandparent, ... up to the root run.
  auto meta = f.branch_meta();
  while (meta) {
    out << "branch of: " << meta->parent_path << " at t=" << solver::time_label(meta->branch_time) << "\n";
    if (!fs::exists(meta->parent_path)) {
      out << "  (parent file missing)\n";
      break;
    }
    meta = CheckpointFile::open_readonly(meta->parent_path).branch_meta();
  }
  const auto labels = f.list_timesteps();
  auto describe = [&](const std::string& l) {
    const auto info = ckptio::snapshot_info(f, l);
    out << "  " << l << "  step " << info.step << "  grids " << info.grids << "  leaves " << info.leaves << "  depth "
        << info.deepest << "  ranks " << info.writer_ranks << "\n";
  };
  if (!opt.label && !opt.window) {
    out << "timesteps: " << labels.size() << "\n";
    for (const auto& l : labels) describe(l);
    return;
  }
  if (labels.empty()) throw ckptio::CheckpointError("file holds no snapshots");
  const auto label = opt.label ? *opt.label : labels.back();
  out << "timestep:\n";
  describe(label);
  if (!opt.window) return;
  topology::WindowQuery q;
  q.window = *opt.window;
  q.budget = opt.budget;
  q.fields = opt.fields;
  const auto sel = ckptio::offline_select_window(f, label, q);
  out << "window: level " << sel.selection.level << "  stride " << sel.selection.stride << "  entries "
      << sel.selection.entries.size() << "  points " << sel.selection.point_count << "\n";
  write_window_csv(geom, sel.selection, sel.values, q.fields, out);
}

}  // namespace trsflow::cli
