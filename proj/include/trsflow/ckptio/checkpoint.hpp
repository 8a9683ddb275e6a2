#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "trsflow/comm/communicator.hpp"
#include "trsflow/solver/simulation.hpp"
#include "trsflow/topology/window.hpp"

namespace trsflow::ckptio {

using comm::Communicator;
using solver::FluidProperties;
using solver::RankDomain;
using solver::SolverParams;
using spacetree::GridGeometry;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The file violates the row contract (ordering, dangling links, bboxes).
class CorruptFileError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// A rank's exclusive row range within every per-grid dataset.
struct Hyperslab {
  std::int64_t row_offset = 0;
  std::int64_t row_count = 0;
  std::int64_t total_rows = 0;

  bool operator==(const Hyperslab&) const = default;
};

/// Collective: total = sum of all counts, offset = sum over lower ranks.
[[nodiscard]] Hyperslab compute_hyperslab(std::int64_t local_count, Communicator& c);

/// Run constants stored once in /common.
struct CommonParams {
  GridGeometry geom;
  FluidProperties fluid;
  SolverParams params;  // params.dt is the common dt

  bool operator==(const CommonParams&) const = default;
};

struct BranchMeta {
  std::string parent_path;
  double branch_time = 0.0;
};

struct FileOptions {
  bool overwrite = false;
  /// Datasets of at least this many bytes start on a multiple of it.
  std::uint64_t alignment = 4u << 20;
};

struct WriteOptions {
  /// Aggregator count A, 1 <= A <= P; 0 means one per rank.
  int aggregators = 0;
};

/// Per-rank record of one snapshot write.
struct WriteStats {
  double seconds = 0.0;
  /// Payload bytes of the whole snapshot (all datasets, all ranks).
  std::uint64_t total_bytes = 0;
  /// Bytes this rank wrote to the file as an aggregator.
  std::uint64_t written_bytes = 0;
  /// Largest slab this rank contributes to a single dataset.
  std::uint64_t largest_slab_bytes = 0;
  /// Peak of simultaneously live write buffers allocated by this rank.
  std::uint64_t peak_buffer_bytes = 0;
  bool aggregator = false;
};

/// Payload bytes of one snapshot with n grids and m parameter cells.
[[nodiscard]] std::uint64_t snapshot_bytes(const GridGeometry& geom, std::int64_t n, std::int64_t m);

namespace detail {
struct FileState;
}

/// Handle of an open checkpoint file. Every rank of a collective open holds a
/// copy sharing one underlying HDF5 file; all HDF5 calls in the process are
/// serialized.
class CheckpointFile {
 public:
  CheckpointFile() = default;

  /// Collective. Creates root, /common and an empty /simulation group. All
  /// ranks must pass the same path and parameters. A failed create leaves no file.
  static CheckpointFile create(const std::string& path, const CommonParams& common, Communicator& c,
                               const FileOptions& opt = {});
  /// Collective. Opens an existing file for reading and appending snapshots.
  static CheckpointFile open(const std::string& path, Communicator& c, bool writable = true);
  /// Non-collective read-only open, for tools.
  static CheckpointFile open_readonly(const std::string& path);

  [[nodiscard]] bool is_open() const { return state_ != nullptr; }
  [[nodiscard]] const std::string& path() const;
  [[nodiscard]] const CommonParams& common() const;
  [[nodiscard]] std::optional<BranchMeta> branch_meta() const;
  /// Snapshot labels in ascending numeric order.
  [[nodiscard]] std::vector<std::string> list_timesteps() const;
  /// Flushes and releases this handle; the file closes with the last handle.
  void close();

  [[nodiscard]] detail::FileState& state() const;

 private:
  std::shared_ptr<detail::FileState> state_;
};

/// Collective. Appends the snapshot of d.time() (label time_label(t)), which
/// must be later than every stored one.
WriteStats write_snapshot(CheckpointFile& file, const RankDomain& d, Communicator& c, const WriteOptions& opt = {});

/// Collective. Materializes this rank's share of snapshot `label` for
/// c.size() ranks: grids are redistributed by a fresh partition of the stored
/// tree, so the rank count may differ from the writer's. The result still
/// needs connect(c, server, false), e.g. through Simulation(geom, domains).
[[nodiscard]] RankDomain read_snapshot(const CheckpointFile& file, const std::string& label, Communicator& c);

/// Runs read_snapshot on `ranks` in-process ranks and connects the result.
[[nodiscard]] solver::Simulation load_simulation(const std::string& path, const std::string& label, int ranks);

/// Creates `branch_path` holding the parent's /common and snapshot `label`,
/// with root attributes parent_path and branch_time. The parent is only read.
void open_branch(const std::string& parent_path, const std::string& label, const std::string& branch_path,
                 bool overwrite = false);

/// Window selection over the rows of a stored snapshot, plus the sampled
/// values: values[e] holds, per requested field, the entry's sampled cells.
struct OfflineSelection {
  topology::WindowSelection selection;
  std::vector<std::vector<std::vector<double>>> values;
};
[[nodiscard]] OfflineSelection offline_select_window(const CheckpointFile& file, const std::string& label,
                                                     const topology::WindowQuery& q);

/// Non-collective. Deletes snapshot `label`, e.g. one left half-written by a
/// failed collective write. The space is not reclaimed.
void remove_snapshot(CheckpointFile& file, const std::string& label);

/// Summary of one stored snapshot. Reading it checks the row contract and
/// throws CorruptFileError naming the violated rule.
struct SnapshotInfo {
  std::int64_t grids = 0;
  std::int64_t leaves = 0;
  int deepest = 0;
  int writer_ranks = 0;  // ranks of the run that wrote it
  std::int64_t step = 0;
  double elapsed = 0.0;
};
[[nodiscard]] SnapshotInfo snapshot_info(const CheckpointFile& file, const std::string& label);

/// SHA-256 of the file contents, lower-case hex.
[[nodiscard]] std::string file_hash(const std::string& path);

/// The label of the stored snapshot whose time equals t, or nullopt.
[[nodiscard]] std::optional<std::string> find_label(const CheckpointFile& file, double t);

}  // namespace trsflow::ckptio
