#pragma once

#include <atomic>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "trsflow/cli/config.hpp"
#include "trsflow/steering/session.hpp"

namespace trsflow::cli {

struct RunResult {
  std::string file;
  std::vector<steering::SnapshotRecord> snapshots;
  std::int64_t steps = 0;
  double t = 0.0;
  bool interrupted = false;
};

/// Steps the configured run to its end time, writing snapshots and printing
/// one line per snapshot (write time and bandwidth). A set *stop ends the
/// run after the current step, so a snapshot is either complete or absent.
RunResult run(const RunConfig& cfg, std::ostream& log, const std::atomic<bool>* stop = nullptr,
              bool overwrite = false);

struct ResumeOptions {
  std::string file;
  std::string label;
  bool branch = false;
  int ranks = 1;
  int aggregators = 0;
  /// Defaults to the resumed time, i.e. no further steps.
  std::optional<double> end_time;
  double snapshot_interval = 0.0;
  /// Branch file path; default <stem>.b<k><ext> next to the parent.
  std::string output;
};
RunResult resume(const ResumeOptions& opt, std::ostream& log, const std::atomic<bool>* stop = nullptr);

/// Runs the configured case behind a console gateway until *stop is set.
/// Stepping starts immediately and pauses at the end time; the console may
/// continue, steer or reload. The bound port is printed to `log`.
void serve(const RunConfig& cfg, std::uint16_t port, const std::atomic<bool>& stop, std::ostream& log,
           bool overwrite = false, const std::string& address = "127.0.0.1");

/// Gateway port from TRSFLOW_GATEWAY_PORT, else `fallback`.
[[nodiscard]] std::uint16_t gateway_port_from_env(std::uint16_t fallback);

// ---- bench ----------------------------------------------------------------

struct BenchOptions {
  std::vector<int> ranks{1, 2, 4, 8};
  /// 0 stands for A = P.
  std::vector<int> aggregators{1, 0};
  /// Depth of the fully refined domain; -1 uses geometry.max_depth.
  int depth = -1;
  /// Directory for the scratch files.
  std::string dir;
  bool keep_files = false;
};

struct BenchRow {
  int ranks = 0;
  int aggregators = 0;
  std::int64_t grids = 0;
  std::int64_t cells = 0;
  std::uint64_t bytes = 0;           // reported by the writer
  std::uint64_t analytic_bytes = 0;  // size formula
  std::uint64_t file_bytes = 0;
  double seconds = 0.0;
  double mb_per_s = 0.0;
  std::string sha256;
  std::string note;  // set when the row was skipped
};

/// Payload bytes of a snapshot with n grids of `cells` cells each, grids
/// having `children` subgrid slots, plus m parameter cells.
[[nodiscard]] std::uint64_t analytic_snapshot_bytes(std::int64_t n, std::int64_t cells, int children, std::int64_t m);

/// For every (P, A) writes one snapshot of a fully refined domain and times it.
std::vector<BenchRow> bench(const RunConfig& cfg, const BenchOptions& opt, std::ostream& log);
/// Header: ranks,aggregators,grids,cells,bytes,analytic_bytes,file_bytes,seconds,mb_per_s,sha256,note
void write_bench_csv(const std::vector<BenchRow>& rows, std::ostream& out);
/// Aligned table of MB/s with P down and A across.
void write_bench_table(const std::vector<BenchRow>& rows, std::ostream& out);

// ---- inspect --------------------------------------------------------------

struct InspectOptions {
  std::optional<std::string> label;
  std::optional<spacetree::Box> window;
  std::int64_t budget = 1000000;
  std::vector<int> fields{0, 1, 2, 3, 4};
};

/// Timesteps, branch ancestry and grid counts; with a window, the sampled
/// cells as CSV (see write_window_csv).
void inspect(const std::string& file, const InspectOptions& opt, std::ostream& out);

/// One line per sampled cell:
/// uid,depth,i,j,k,x,y,z,<field names...>
/// (i, j, k) index the cell inside its grid; x, y, z is the cell centre.
void write_window_csv(const spacetree::GridGeometry& geom, const topology::WindowSelection& sel,
                      const std::vector<std::vector<std::vector<double>>>& values, const std::vector<int>& fields,
                      std::ostream& out);

}  // namespace trsflow::cli
