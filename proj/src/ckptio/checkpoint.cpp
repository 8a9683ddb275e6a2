#include "trsflow/ckptio/checkpoint.hpp"

#include <hdf5.h>
#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <unordered_map>

#include "trsflow/solver/serialize.hpp"
#include "trsflow/solver/stepper.hpp"

namespace trsflow::ckptio {

using spacetree::DGrid;
using spacetree::Location;
using spacetree::Uid;

namespace detail {

std::recursive_mutex& h5_mutex() {
  static std::recursive_mutex m;
  return m;
}

struct FileState {
  std::string path;
  hid_t file = -1;
  bool writable = false;
  CommonParams common;
  std::optional<BranchMeta> branch;

  ~FileState() {
    std::lock_guard lock(h5_mutex());
    if (file >= 0) H5Fclose(file);
  }
};

}  // namespace detail

namespace {

using detail::h5_mutex;

// The error stack is per thread in a thread-safe HDF5 build.
void quiet_hdf5() {
  thread_local bool done = false;
  if (!done) H5Eset_auto2(H5E_DEFAULT, nullptr, nullptr);
  done = true;
}

// Every HDF5 call happens under this lock.
struct Lock {
  Lock() : guard(h5_mutex()) { quiet_hdf5(); }
  explicit Lock(std::recursive_mutex& m) : guard(m) { quiet_hdf5(); }
  std::lock_guard<std::recursive_mutex> guard;
};

hid_t check(hid_t id, const std::string& what) {
  if (id < 0) throw CheckpointError("HDF5: " + what + " failed");
  return id;
}

void check(herr_t rc, const std::string& what, int) {
  if (rc < 0) throw CheckpointError("HDF5: " + what + " failed");
}

// Owning hid_t with its matching close function.
class Hid {
 public:
  Hid() = default;
  Hid(hid_t id, herr_t (*close)(hid_t)) : id_(id), close_(close) {}
  Hid(const Hid&) = delete;
  Hid& operator=(const Hid&) = delete;
  Hid(Hid&& o) noexcept : id_(o.id_), close_(o.close_) { o.id_ = -1; }
  Hid& operator=(Hid&& o) noexcept {
    std::swap(id_, o.id_);
    std::swap(close_, o.close_);
    return *this;
  }
  ~Hid() {
    if (id_ >= 0 && close_) close_(id_);
  }
  [[nodiscard]] hid_t get() const { return id_; }

 private:
  hid_t id_ = -1;
  herr_t (*close_)(hid_t) = nullptr;
};

Hid group_create(hid_t loc, const std::string& name) {
  Hid gcpl(check(H5Pcreate(H5P_GROUP_CREATE), "group property list"), H5Pclose);
  check(H5Pset_obj_track_times(gcpl.get(), false), "track times", 0);
  return {check(H5Gcreate2(loc, name.c_str(), H5P_DEFAULT, gcpl.get(), H5P_DEFAULT), "create group " + name),
          H5Gclose};
}

Hid group_open(hid_t loc, const std::string& name) {
  return {check(H5Gopen2(loc, name.c_str(), H5P_DEFAULT), "open group " + name), H5Gclose};
}

Hid dataset_create(hid_t loc, const std::string& name, hid_t type, std::int64_t rows, std::int64_t cols) {
  const hsize_t dims[2] = {static_cast<hsize_t>(rows), static_cast<hsize_t>(cols)};
  Hid space(check(H5Screate_simple(2, dims, nullptr), "dataspace"), H5Sclose);
  Hid dcpl(check(H5Pcreate(H5P_DATASET_CREATE), "dataset property list"), H5Pclose);
  check(H5Pset_obj_track_times(dcpl.get(), false), "track times", 0);
  check(H5Pset_alloc_time(dcpl.get(), H5D_ALLOC_TIME_EARLY), "alloc time", 0);
  check(H5Pset_fill_time(dcpl.get(), H5D_FILL_TIME_NEVER), "fill time", 0);
  return {check(H5Dcreate2(loc, name.c_str(), type, space.get(), H5P_DEFAULT, dcpl.get(), H5P_DEFAULT),
                "create dataset " + name),
          H5Dclose};
}

Hid dataset_open(hid_t loc, const std::string& name) {
  return {check(H5Dopen2(loc, name.c_str(), H5P_DEFAULT), "open dataset " + name), H5Dclose};
}

std::array<hsize_t, 2> dataset_dims(hid_t ds) {
  Hid space(check(H5Dget_space(ds), "get space"), H5Sclose);
  std::array<hsize_t, 2> dims{0, 1};
  const int nd = H5Sget_simple_extent_ndims(space.get());
  if (nd < 1 || nd > 2) throw CorruptFileError("unexpected dataset rank");
  H5Sget_simple_extent_dims(space.get(), dims.data(), nullptr);
  return dims;
}

// Writes/reads rows [row, row+rows) of a 2D dataset.
void rows_io(hid_t ds, hid_t memtype, std::int64_t row, std::int64_t rows, void* data, bool write) {
  if (rows == 0) return;
  const auto dims = dataset_dims(ds);
  Hid fspace(check(H5Dget_space(ds), "get space"), H5Sclose);
  const hsize_t start[2] = {static_cast<hsize_t>(row), 0};
  const hsize_t count[2] = {static_cast<hsize_t>(rows), dims[1]};
  check(H5Sselect_hyperslab(fspace.get(), H5S_SELECT_SET, start, nullptr, count, nullptr), "select", 0);
  Hid mspace(check(H5Screate_simple(2, count, nullptr), "memory space"), H5Sclose);
  if (write) {
    check(H5Dwrite(ds, memtype, mspace.get(), fspace.get(), H5P_DEFAULT, data), "write rows", 0);
  } else {
    check(H5Dread(ds, memtype, mspace.get(), fspace.get(), H5P_DEFAULT, data), "read rows", 0);
  }
}

template <class T>
std::vector<T> read_all(hid_t ds, hid_t memtype) {
  const auto dims = dataset_dims(ds);
  std::vector<T> out(static_cast<std::size_t>(dims[0] * dims[1]));
  if (!out.empty()) check(H5Dread(ds, memtype, H5S_ALL, H5S_ALL, H5P_DEFAULT, out.data()), "read dataset", 0);
  return out;
}

template <class T>
void write_small(hid_t loc, const std::string& name, hid_t type, const std::vector<T>& v) {
  auto ds = dataset_create(loc, name, type, static_cast<std::int64_t>(v.size()), 1);
  if (!v.empty()) check(H5Dwrite(ds.get(), type, H5S_ALL, H5S_ALL, H5P_DEFAULT, v.data()), "write " + name, 0);
}

void attr_write(hid_t obj, const std::string& name, hid_t type, const void* value) {
  Hid space(check(H5Screate(H5S_SCALAR), "scalar space"), H5Sclose);
  Hid a(check(H5Acreate2(obj, name.c_str(), type, space.get(), H5P_DEFAULT, H5P_DEFAULT), "attribute " + name),
        H5Aclose);
  check(H5Awrite(a.get(), type, value), "write attribute " + name, 0);
}

void attr_write_string(hid_t obj, const std::string& name, const std::string& value) {
  Hid type(check(H5Tcopy(H5T_C_S1), "string type"), H5Tclose);
  check(H5Tset_size(type.get(), std::max<std::size_t>(value.size(), 1)), "string size", 0);
  check(H5Tset_strpad(type.get(), H5T_STR_NULLPAD), "string pad", 0);
  std::string padded = value;
  padded.resize(std::max<std::size_t>(value.size(), 1), '\0');
  attr_write(obj, name, type.get(), padded.data());
}

bool attr_exists(hid_t obj, const std::string& name) { return H5Aexists(obj, name.c_str()) > 0; }

template <class T>
T attr_read(hid_t obj, const std::string& name, hid_t memtype) {
  Hid a(check(H5Aopen(obj, name.c_str(), H5P_DEFAULT), "open attribute " + name), H5Aclose);
  T v{};
  check(H5Aread(a.get(), memtype, &v), "read attribute " + name, 0);
  return v;
}

std::string attr_read_string(hid_t obj, const std::string& name) {
  Hid a(check(H5Aopen(obj, name.c_str(), H5P_DEFAULT), "open attribute " + name), H5Aclose);
  Hid ftype(check(H5Aget_type(a.get()), "attribute type"), H5Tclose);
  const auto n = H5Tget_size(ftype.get());
  Hid type(check(H5Tcopy(H5T_C_S1), "string type"), H5Tclose);
  check(H5Tset_size(type.get(), n), "string size", 0);
  check(H5Tset_strpad(type.get(), H5T_STR_NULLPAD), "string pad", 0);
  std::string s(n, '\0');
  check(H5Aread(a.get(), type.get(), s.data()), "read attribute " + name, 0);
  s.resize(std::strlen(s.c_str()));
  return s;
}

// ---- /common ---------------------------------------------------------------

constexpr const char* kFluidFields = "rho_inf,mu,beta,T_inf,g_x,g_y,g_z,k_cond,c_p,q_int";

void write_common(hid_t file, const CommonParams& cp) {
  auto g = group_create(file, "common");
  const auto& geom = cp.geom;
  write_small(g.get(), "dt", H5T_NATIVE_DOUBLE, std::vector<double>{cp.params.dt});
  write_small(g.get(), "r", H5T_NATIVE_INT32, std::vector<std::int32_t>(geom.r.begin(), geom.r.end()));
  write_small(g.get(), "s", H5T_NATIVE_INT32, std::vector<std::int32_t>(geom.s.begin(), geom.s.end()));
  write_small(g.get(), "d_max", H5T_NATIVE_INT32, std::vector<std::int32_t>{geom.max_depth});
  const auto& b = geom.domain;
  write_small(g.get(), "domain_box", H5T_NATIVE_DOUBLE,
              std::vector<double>{b.lo[0], b.lo[1], b.lo[2], b.hi[0], b.hi[1], b.hi[2]});
  const auto& f = cp.fluid;
  write_small(g.get(), "fluid_properties", H5T_NATIVE_DOUBLE,
              std::vector<double>{f.rho_inf, f.mu, f.beta, f.T_inf, f.g[0], f.g[1], f.g[2], f.k_cond, f.c_p,
                                  f.q_int});
  {
    auto ds = dataset_open(g.get(), "fluid_properties");
    attr_write_string(ds.get(), "fields", kFluidFields);
  }
  attr_write_string(g.get(), "solver_params", nlohmann::json(cp.params).dump());
}

CommonParams read_common(hid_t file) {
  auto g = group_open(file, "common");
  CommonParams cp;
  const auto load_d = [&](const char* n) {
    auto ds = dataset_open(g.get(), n);
    return read_all<double>(ds.get(), H5T_NATIVE_DOUBLE);
  };
  const auto load_i = [&](const char* n) {
    auto ds = dataset_open(g.get(), n);
    return read_all<std::int32_t>(ds.get(), H5T_NATIVE_INT32);
  };
  const auto r = load_i("r");
  const auto s = load_i("s");
  const auto dmax = load_i("d_max");
  const auto box = load_d("domain_box");
  const auto fl = load_d("fluid_properties");
  const auto dt = load_d("dt");
  if (r.size() != 3 || s.size() != 3 || dmax.size() != 1 || box.size() != 6 || fl.size() != 10 || dt.size() != 1) {
    throw CorruptFileError("malformed /common group");
  }
  for (int a = 0; a < 3; ++a) {
    cp.geom.r[static_cast<std::size_t>(a)] = r[static_cast<std::size_t>(a)];
    cp.geom.s[static_cast<std::size_t>(a)] = s[static_cast<std::size_t>(a)];
    cp.geom.domain.lo[static_cast<std::size_t>(a)] = box[static_cast<std::size_t>(a)];
    cp.geom.domain.hi[static_cast<std::size_t>(a)] = box[static_cast<std::size_t>(a) + 3];
  }
  cp.geom.max_depth = dmax[0];
  cp.fluid = FluidProperties{fl[0], fl[1], fl[2], fl[3], {fl[4], fl[5], fl[6]}, fl[7], fl[8], fl[9]};
  if (attr_exists(g.get(), "solver_params")) {
    cp.params = nlohmann::json::parse(attr_read_string(g.get(), "solver_params")).get<SolverParams>();
  }
  cp.params.dt = dt[0];
  return cp;
}

std::optional<BranchMeta> read_branch(hid_t file) {
  Hid root(check(H5Gopen2(file, "/", H5P_DEFAULT), "open root"), H5Gclose);
  if (!attr_exists(root.get(), "parent_path")) return std::nullopt;
  BranchMeta m;
  m.parent_path = attr_read_string(root.get(), "parent_path");
  m.branch_time = attr_read<double>(root.get(), "branch_time", H5T_NATIVE_DOUBLE);
  return m;
}

Hid file_access(std::uint64_t alignment) {
  Hid fapl(check(H5Pcreate(H5P_FILE_ACCESS), "file access list"), H5Pclose);
  if (alignment > 1) check(H5Pset_alignment(fapl.get(), alignment, alignment), "alignment", 0);
  return fapl;
}

// Open files by canonical path. HDF5 refuses a second open of a file that is
// already open for writing, so later opens share the first handle.
std::map<std::string, std::weak_ptr<detail::FileState>>& registry() {
  static std::map<std::string, std::weak_ptr<detail::FileState>> r;
  return r;
}

std::string canonical(const std::string& path) {
  return std::filesystem::weakly_canonical(std::filesystem::absolute(path)).string();
}

void register_state(const std::shared_ptr<detail::FileState>& st) { registry()[canonical(st->path)] = st; }

std::shared_ptr<detail::FileState> open_state(const std::string& path, bool writable) {
  quiet_hdf5();
  Lock lock(h5_mutex());
  if (std::filesystem::exists(path)) {
    const auto it = registry().find(canonical(path));
    if (it != registry().end()) {
      if (auto live = it->second.lock()) {
        if (writable && !live->writable) throw CheckpointError("checkpoint file already open read-only: " + path);
        H5Fflush(live->file, H5F_SCOPE_GLOBAL);
        return live;
      }
    }
  }
  auto st = std::make_shared<detail::FileState>();
  st->path = path;
  st->writable = writable;
  if (!std::filesystem::exists(path)) throw CheckpointError("no such checkpoint file: " + path);
  Hid fapl = file_access(FileOptions{}.alignment);
  st->file = H5Fopen(path.c_str(), writable ? H5F_ACC_RDWR : H5F_ACC_RDONLY, fapl.get());
  if (st->file < 0) throw CheckpointError("cannot open checkpoint file " + path);
  st->common = read_common(st->file);
  st->branch = read_branch(st->file);
  register_state(st);
  return st;
}

std::vector<std::string> labels_of(hid_t file) {
  auto sim = group_open(file, "simulation");
  std::vector<std::string> out;
  H5Literate(
      sim.get(), H5_INDEX_NAME, H5_ITER_NATIVE, nullptr,
      [](hid_t, const char* name, const H5L_info_t*, void* op) -> herr_t {
        static_cast<std::vector<std::string>*>(op)->emplace_back(name);
        return 0;
      },
      &out);
  std::sort(out.begin(), out.end(),
            [](const std::string& a, const std::string& b) { return std::strtod(a.c_str(), nullptr) < std::strtod(b.c_str(), nullptr); });
  return out;
}

// Runs fn on rank 0 and rethrows its failure on every rank.
template <class F>
void on_root(Communicator& c, F&& fn) {
  std::string err;
  if (c.rank() == 0) {
    try {
      fn();
    } catch (const std::exception& e) {
      err = e.what();
    }
  }
  err = c.broadcast(err, 0);
  if (!err.empty()) throw CheckpointError(err);
}

// ---- snapshot datasets -----------------------------------------------------

enum class Elem { kU64, kF64, kI32 };

struct DatasetSpec {
  const char* name;
  Elem elem;
  bool per_grid;  // rows are grids; otherwise parameter cells
};

constexpr std::array<DatasetSpec, 8> kDatasets{{
    {"grid_property", Elem::kU64, true},
    {"subgrid_uid", Elem::kU64, true},
    {"bounding_box", Elem::kF64, true},
    {"current_cell_data", Elem::kF64, true},
    {"previous_cell_data", Elem::kF64, true},
    {"temp_cell_data", Elem::kF64, true},
    {"cell_type", Elem::kI32, true},
    {"cell_type_params", Elem::kF64, false},
}};

hid_t file_type(Elem e) {
  switch (e) {
    case Elem::kU64: return H5T_STD_U64LE;
    case Elem::kF64: return H5T_IEEE_F64LE;
    case Elem::kI32: return H5T_STD_I32LE;
  }
  return H5T_IEEE_F64LE;
}

hid_t mem_type(Elem e) {
  switch (e) {
    case Elem::kU64: return H5T_NATIVE_UINT64;
    case Elem::kF64: return H5T_NATIVE_DOUBLE;
    case Elem::kI32: return H5T_NATIVE_INT32;
  }
  return H5T_NATIVE_DOUBLE;
}

std::int64_t columns(std::size_t k, const GridGeometry& geom) {
  const auto cells = geom.cells_per_grid();
  switch (k) {
    case 0: return 1;
    case 1: return geom.children_per_grid();
    case 2: return 6;
    case 3:
    case 4:
    case 5: return cells * spacetree::kNumFields;
    case 6: return cells;
    default: return 6;
  }
}

std::size_t elem_size(Elem e) { return e == Elem::kI32 ? 4 : 8; }

// Live-byte accounting of write buffers for WriteStats::peak_buffer_bytes.
struct BufferMeter {
  std::uint64_t live = 0;
  std::uint64_t peak = 0;
  void add(std::uint64_t n) {
    live += n;
    peak = std::max(peak, live);
  }
  void sub(std::uint64_t n) { live -= n; }
};

// One rank's parameter cells: (local grid, interior linear index).
std::vector<std::pair<std::size_t, std::int64_t>> param_cells(const RankDomain& d) {
  std::vector<std::pair<std::size_t, std::int64_t>> out;
  for (std::size_t g = 0; g < d.grids.size(); ++g) {
    for (std::int64_t lin = 0; lin < d.grids[g].cells(); ++lin) {
      if (d.grids[g].params(lin)) out.emplace_back(g, lin);
    }
  }
  return out;
}

void put(std::vector<unsigned char>& b, std::size_t& at, const void* v, std::size_t n) {
  std::memcpy(b.data() + at, v, n);
  at += n;
}

// Linear buffer of dataset k for this rank, in Lebesgue order of its grids.
std::vector<unsigned char> build_buffer(std::size_t k, const RankDomain& d, std::int64_t row_offset,
                                        const std::vector<std::pair<std::size_t, std::int64_t>>& pcells) {
  const auto& def = kDatasets[k];
  const auto cols = columns(k, d.geom);
  const auto rows = def.per_grid ? static_cast<std::int64_t>(d.grids.size()) : static_cast<std::int64_t>(pcells.size());
  std::vector<unsigned char> b(static_cast<std::size_t>(rows * cols) * elem_size(def.elem));
  std::size_t at = 0;
  if (!def.per_grid) {
    for (const auto& [g, lin] : pcells) {
      const auto bc = *d.grids[g].params(lin);
      const double rec[6] = {static_cast<double>(row_offset + static_cast<std::int64_t>(g)),
                             static_cast<double>(lin),
                             bc.velocity[0],
                             bc.velocity[1],
                             bc.velocity[2],
                             bc.temperature};
      put(b, at, rec, sizeof rec);
    }
    return b;
  }
  for (std::size_t gi = 0; gi < d.grids.size(); ++gi) {
    const DGrid& g = d.grids[gi];
    const auto& L = g.layout();
    switch (k) {
      case 0: {
        const std::uint64_t u = g.uid().raw();
        put(b, at, &u, 8);
        break;
      }
      case 1: {
        const auto& ch = d.lgrids[gi].children;
        for (std::int64_t m = 0; m < cols; ++m) {
          const std::uint64_t u = ch.empty() ? Uid::sentinel().raw() : ch[static_cast<std::size_t>(m)].raw();
          put(b, at, &u, 8);
        }
        break;
      }
      case 2: {
        const auto& bb = g.bbox();
        const double v[6] = {bb.lo[0], bb.lo[1], bb.lo[2], bb.hi[0], bb.hi[1], bb.hi[2]};
        put(b, at, v, sizeof v);
        break;
      }
      case 3:
      case 4:
      case 5: {
        const auto& buf = k == 3 ? g.current : k == 4 ? g.previous : g.temp;
        for (std::int64_t lin = 0; lin < g.cells(); ++lin) {
          const auto p = L.interior(lin);
          for (int f = 0; f < spacetree::kNumFields; ++f) {
            const double x = buf.at(f, p);
            put(b, at, &x, 8);
          }
        }
        break;
      }
      case 6: {
        for (std::int64_t lin = 0; lin < g.cells(); ++lin) {
          const auto c = static_cast<std::int32_t>(g.code(L.interior(lin)));
          put(b, at, &c, 4);
        }
        break;
      }
      default: break;
    }
  }
  return b;
}

constexpr std::uint64_t kTagData = std::uint64_t{1} << 62;
constexpr std::uint64_t kTagAck = kTagData + (std::uint64_t{1} << 32);

}  // namespace

// ---- public API ------------------------------------------------------------

Hyperslab compute_hyperslab(std::int64_t local_count, Communicator& c) {
  if (local_count < 0) throw CheckpointError("negative row count");
  Hyperslab h;
  h.row_count = local_count;
  h.row_offset = c.exscan_sum(local_count);
  h.total_rows = c.allreduce_sum(local_count);
  return h;
}

std::uint64_t snapshot_bytes(const GridGeometry& geom, std::int64_t n, std::int64_t m) {
  std::uint64_t per_grid = 0;
  for (std::size_t k = 0; k + 1 < kDatasets.size(); ++k) {
    per_grid += static_cast<std::uint64_t>(columns(k, geom)) * elem_size(kDatasets[k].elem);
  }
  return per_grid * static_cast<std::uint64_t>(n) + static_cast<std::uint64_t>(m) * 6 * 8;
}

detail::FileState& CheckpointFile::state() const {
  if (!state_) throw CheckpointError("checkpoint file is not open");
  return *state_;
}

const std::string& CheckpointFile::path() const { return state().path; }
const CommonParams& CheckpointFile::common() const { return state().common; }
std::optional<BranchMeta> CheckpointFile::branch_meta() const { return state().branch; }

std::vector<std::string> CheckpointFile::list_timesteps() const {
  Lock lock(h5_mutex());
  return labels_of(state().file);
}

void CheckpointFile::close() {
  if (!state_) return;
  {
    Lock lock(h5_mutex());
    if (state_->file >= 0 && state_->writable) H5Fflush(state_->file, H5F_SCOPE_GLOBAL);
  }
  state_.reset();
}

CheckpointFile CheckpointFile::create(const std::string& path, const CommonParams& common, Communicator& c,
                                      const FileOptions& opt) {
  quiet_hdf5();
  const std::string mine = nlohmann::json{{"path", path},
                                          {"geom", common.geom},
                                          {"fluid", common.fluid},
                                          {"params", common.params},
                                          {"overwrite", opt.overwrite},
                                          {"alignment", opt.alignment}}
                               .dump();
  const auto all = c.allgather(mine);
  std::shared_ptr<detail::FileState> st;
  on_root(c, [&] {
    for (const auto& a : all) {
      if (a != mine) throw CheckpointError("create_file: ranks passed different arguments");
    }
    common.geom.validate();
    Lock lock(h5_mutex());
    if (std::filesystem::exists(path) && !opt.overwrite) {
      throw CheckpointError("checkpoint file exists: " + path);
    }
    if (std::filesystem::exists(path)) {
      const auto it = registry().find(canonical(path));
      if (it != registry().end() && !it->second.expired()) throw CheckpointError("checkpoint file is open: " + path);
    }
    st = std::make_shared<detail::FileState>();
    st->path = path;
    st->writable = true;
    st->common = common;
    try {
      Hid fapl = file_access(opt.alignment);
      st->file = check(H5Fcreate(path.c_str(), H5F_ACC_TRUNC, H5P_DEFAULT, fapl.get()), "create " + path);
      write_common(st->file, common);
      group_create(st->file, "simulation");
      check(H5Fflush(st->file, H5F_SCOPE_GLOBAL), "flush", 0);
      register_state(st);
    } catch (...) {
      if (st->file >= 0) H5Fclose(st->file);
      st->file = -1;
      std::filesystem::remove(path);
      throw;
    }
  });
  CheckpointFile f;
  f.state_ = c.broadcast(st, 0);
  return f;
}

CheckpointFile CheckpointFile::open(const std::string& path, Communicator& c, bool writable) {
  std::shared_ptr<detail::FileState> st;
  on_root(c, [&] { st = open_state(path, writable); });
  CheckpointFile f;
  f.state_ = c.broadcast(st, 0);
  return f;
}

CheckpointFile CheckpointFile::open_readonly(const std::string& path) {
  CheckpointFile f;
  f.state_ = open_state(path, false);
  return f;
}

std::optional<std::string> find_label(const CheckpointFile& file, double t) {
  const auto want = solver::time_label(t);
  for (const auto& l : file.list_timesteps()) {
    if (l == want) return l;
  }
  return std::nullopt;
}

WriteStats write_snapshot(CheckpointFile& file, const RankDomain& d, Communicator& c, const WriteOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  auto& st = file.state();
  const int P = c.size();
  const int A = opt.aggregators == 0 ? P : opt.aggregators;
  if (A < 1 || A > P) throw CheckpointError("aggregator count must lie in [1, P]");
  const double t = d.time();
  const auto label = solver::time_label(t);

  const auto pcells = param_cells(d);
  const auto grid_slab = compute_hyperslab(static_cast<std::int64_t>(d.grids.size()), c);
  const auto param_slab = compute_hyperslab(static_cast<std::int64_t>(pcells.size()), c);
  const auto grid_slabs = c.allgather(grid_slab);
  const auto param_slabs = c.allgather(param_slab);

  on_root(c, [&] {
    if (!st.writable) throw CheckpointError("checkpoint file opened read-only");
    if (grid_slab.total_rows < 1) throw CheckpointError("snapshot without grids");
    if (d.grids.empty() || d.grids.front().depth() != 0) throw CheckpointError("rank 0 does not hold the root grid");
    Lock lock(h5_mutex());
    const auto labels = labels_of(st.file);
    if (!labels.empty() && !(std::strtod(labels.back().c_str(), nullptr) < std::strtod(label.c_str(), nullptr))) {
      throw CheckpointError("snapshot time " + label + " is not after the last stored time " + labels.back());
    }
    auto sim = group_open(st.file, "simulation");
    auto g = group_create(sim.get(), label);
    const std::int64_t step = d.step;
    attr_write(g.get(), "step", H5T_NATIVE_INT64, &step);
    attr_write(g.get(), "elapsed", H5T_NATIVE_DOUBLE, &t);
    attr_write_string(g.get(), "objects", nlohmann::json(d.objects).dump());
    for (std::size_t k = 0; k < kDatasets.size(); ++k) {
      const auto& def = kDatasets[k];
      dataset_create(g.get(), def.name, file_type(def.elem),
                     def.per_grid ? grid_slab.total_rows : param_slab.total_rows, columns(k, d.geom));
    }
  });

  // Aggregator a serves ranks {r : floor(r*A/P) == a} and is the lowest of them.
  const auto agg_of = [&](int r) { return static_cast<int>(static_cast<std::int64_t>(r) * A / P); };
  const int my_agg = agg_of(c.rank());
  int agg_rank = c.rank();
  while (agg_rank > 0 && agg_of(agg_rank - 1) == my_agg) --agg_rank;
  std::vector<int> members;
  if (agg_rank == c.rank()) {
    for (int r = c.rank(); r < P && agg_of(r) == my_agg; ++r) members.push_back(r);
  }

  WriteStats ws;
  ws.aggregator = agg_rank == c.rank();
  ws.total_bytes = snapshot_bytes(d.geom, grid_slab.total_rows, param_slab.total_rows);
  BufferMeter meter;
  Hid group;
  if (ws.aggregator) {
    Lock lock(h5_mutex());
    auto sim = group_open(st.file, "simulation");
    group = group_open(sim.get(), label);
  }
  for (std::size_t k = 0; k < kDatasets.size(); ++k) {
    const auto& def = kDatasets[k];
    const auto cols = columns(k, d.geom);
    const auto slab_of = [&](int r) {
      return def.per_grid ? grid_slabs[static_cast<std::size_t>(r)] : param_slabs[static_cast<std::size_t>(r)];
    };
    const auto own_rows = slab_of(c.rank()).row_count;
    ws.largest_slab_bytes = std::max<std::uint64_t>(
        ws.largest_slab_bytes, static_cast<std::uint64_t>(own_rows * cols) * elem_size(def.elem));
    if (!ws.aggregator) {
      auto buf = build_buffer(k, d, grid_slab.row_offset, pcells);
      meter.add(buf.size());
      const auto n = buf.size();
      c.send(agg_rank, kTagData + k, std::move(buf));
      (void)c.recv(agg_rank, kTagAck + k);
      meter.sub(n);
      continue;
    }
    Hid ds;
    {
      Lock lock(h5_mutex());
      ds = dataset_open(group.get(), def.name);
    }
    for (const int r : members) {
      std::vector<unsigned char> buf;
      if (r == c.rank()) {
        buf = build_buffer(k, d, grid_slab.row_offset, pcells);
        meter.add(buf.size());
      } else {
        buf = std::any_cast<std::vector<unsigned char>>(c.recv(r, kTagData + k).payload);
      }
      {
        Lock lock(h5_mutex());
        rows_io(ds.get(), mem_type(def.elem), slab_of(r).row_offset, slab_of(r).row_count, buf.data(), true);
      }
      ws.written_bytes += buf.size();
      if (r == c.rank()) {
        meter.sub(buf.size());
      } else {
        c.send(r, kTagAck + k, true);
      }
    }
  }
  {
    Lock lock(h5_mutex());
    group = Hid();
  }
  c.barrier();
  on_root(c, [&] {
    Lock lock(h5_mutex());
    check(H5Fflush(st.file, H5F_SCOPE_GLOBAL), "flush", 0);
  });
  ws.peak_buffer_bytes = meter.peak;
  ws.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return ws;
}

namespace {

// Row-level view of one stored snapshot.
struct SnapshotIndex {
  std::vector<Uid> uids;                // per row
  std::vector<std::uint64_t> children;  // rows x group
  std::vector<double> boxes;            // rows x 6
  std::unordered_map<Uid, std::int64_t> row_of;
  std::int64_t step = 0;
  double elapsed = 0.0;
  std::string objects;
};

SnapshotIndex load_index(const detail::FileState& st, const std::string& label) {
  Lock lock(h5_mutex());
  const auto labels = labels_of(st.file);
  if (std::find(labels.begin(), labels.end(), label) == labels.end()) {
    std::string avail;
    for (const auto& l : labels) avail += (avail.empty() ? "" : ", ") + l;
    throw CheckpointError("no snapshot " + label + " (available: " + (avail.empty() ? "none" : avail) + ")");
  }
  auto sim = group_open(st.file, "simulation");
  auto g = group_open(sim.get(), label);
  SnapshotIndex ix;
  ix.step = attr_read<std::int64_t>(g.get(), "step", H5T_NATIVE_INT64);
  ix.elapsed = attr_read<double>(g.get(), "elapsed", H5T_NATIVE_DOUBLE);
  ix.objects = attr_read_string(g.get(), "objects");
  {
    auto ds = dataset_open(g.get(), "grid_property");
    for (const auto raw : read_all<std::uint64_t>(ds.get(), H5T_NATIVE_UINT64)) ix.uids.push_back(Uid::from_raw(raw));
  }
  {
    auto ds = dataset_open(g.get(), "subgrid_uid");
    ix.children = read_all<std::uint64_t>(ds.get(), H5T_NATIVE_UINT64);
  }
  {
    auto ds = dataset_open(g.get(), "bounding_box");
    ix.boxes = read_all<double>(ds.get(), H5T_NATIVE_DOUBLE);
  }
  const auto& geom = st.common.geom;
  const auto n = ix.uids.size();
  const auto group = static_cast<std::size_t>(geom.children_per_grid());
  if (n == 0) throw CorruptFileError("snapshot " + label + " holds no grids");
  if (ix.children.size() != n * group || ix.boxes.size() != n * 6) {
    throw CorruptFileError("snapshot " + label + ": dataset row counts disagree");
  }
  if (ix.uids[0].depth() != 0) throw CorruptFileError("row 0 is not the root grid");
  for (std::size_t i = 0; i < n; ++i) {
    if (!ix.row_of.emplace(ix.uids[i], static_cast<std::int64_t>(i)).second) {
      throw CorruptFileError("duplicate uid " + ix.uids[i].hex());
    }
    if (i > 0) {
      const auto a = ix.uids[i - 1];
      const auto b = ix.uids[i];
      const bool ordered = a.rank() < b.rank() ||
                           (a.rank() == b.rank() && spacetree::lebesgue_key(a) < spacetree::lebesgue_key(b));
      if (!ordered) throw CorruptFileError("rows not ordered by rank and Lebesgue order at row " + std::to_string(i));
    }
    const auto bb = geom.bbox(ix.uids[i].location());
    const double* box = &ix.boxes[i * 6];
    const spacetree::Box stored{{box[0], box[1], box[2]}, {box[3], box[4], box[5]}};
    if (!(stored == bb)) throw CorruptFileError("bounding box of row " + std::to_string(i) + " disagrees with its uid");
  }
  // Every child link must resolve to the matching child location.
  std::size_t linked = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto* ch = &ix.children[i * group];
    const bool leaf = ch[0] == Uid::sentinel().raw();
    for (std::size_t m = 0; m < group; ++m) {
      if ((ch[m] == Uid::sentinel().raw()) != leaf) throw CorruptFileError("partial child list in row " + std::to_string(i));
      if (leaf) continue;
      const auto it = ix.row_of.find(Uid::from_raw(ch[m]));
      if (it == ix.row_of.end()) {
        throw CorruptFileError("dangling subgrid uid " + Uid::from_raw(ch[m]).hex() + " in row " + std::to_string(i));
      }
      if (Uid::from_raw(ch[m]).location() != ix.uids[i].location().child(static_cast<int>(m))) {
        throw CorruptFileError("subgrid uid in row " + std::to_string(i) + " has the wrong location");
      }
      ++linked;
    }
  }
  if (linked != n - 1) throw CorruptFileError("grid rows not reachable from the root");
  return ix;
}

// Reads the rows `rows` (ascending) of a dataset into consecutive slots of out.
template <class T>
void read_rows(hid_t ds, hid_t memtype, const std::vector<std::int64_t>& rows, std::int64_t cols, std::vector<T>& out) {
  out.assign(rows.size() * static_cast<std::size_t>(cols), T{});
  std::size_t i = 0;
  while (i < rows.size()) {
    std::size_t j = i + 1;
    while (j < rows.size() && rows[j] == rows[j - 1] + 1) ++j;
    rows_io(ds, memtype, rows[i], static_cast<std::int64_t>(j - i), out.data() + i * static_cast<std::size_t>(cols), false);
    i = j;
  }
}

}  // namespace

RankDomain read_snapshot(const CheckpointFile& file, const std::string& label, Communicator& c) {
  const auto& st = file.state();
  SnapshotIndex ix;
  {
    std::pair<int, std::string> err{0, ""};
    try {
      ix = load_index(st, label);
    } catch (const CorruptFileError& e) {
      err = {2, e.what()};
    } catch (const std::exception& e) {
      err = {1, e.what()};
    }
    // Every rank reads the index; agree on failure so no rank is left waiting.
    for (const auto& [kind, what] : c.allgather(err)) {
      if (kind == 2) throw CorruptFileError(what);
      if (kind == 1) throw CheckpointError(what);
    }
  }
  const auto& cp = st.common;
  RankDomain d;
  d.rank = c.rank();
  d.ranks = c.size();
  d.geom = cp.geom;
  d.fluid = cp.fluid;
  d.params = cp.params;
  d.step = ix.step;
  d.objects = nlohmann::json::parse(ix.objects).get<std::vector<solver::BoundaryObject>>();

  spacetree::SpaceTree tree(cp.geom);
  std::vector<Location> locs;
  for (const auto u : ix.uids) locs.push_back(u.location());
  std::sort(locs.begin(), locs.end(),
            [](Location a, Location b) { return spacetree::lebesgue_key(a) < spacetree::lebesgue_key(b); });
  for (const auto loc : locs) {
    if (loc.depth() == 0) continue;
    if (!tree.contains(loc.parent())) throw CorruptFileError("orphan grid " + std::to_string(loc.bits()));
    if (tree.is_leaf(loc.parent())) tree.refine(loc.parent());
  }
  if (tree.size() != ix.uids.size()) throw CorruptFileError("stored grids do not form complete refinements");

  std::unordered_map<Location, std::int64_t> row_at;
  for (const auto& [u, r] : ix.row_of) row_at[u.location()] = r;
  const auto uids = spacetree::assign_uids(tree, c.size());
  std::vector<std::int64_t> rows;
  for (auto& lg : spacetree::make_lgrids(tree, uids)) {
    if (static_cast<int>(lg.uid.rank()) != c.rank()) continue;
    const auto loc = lg.uid.location();
    rows.push_back(row_at.at(loc));
    d.grids.emplace_back(lg.uid, lg.bbox, cp.geom.s);
    d.lgrids.push_back(std::move(lg));
  }
  // Lebesgue order of a rank's grids matches row order within the writer's
  // rank, but a repartition may interleave writers; sort row reads.
  std::vector<std::size_t> order(rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rows[a] < rows[b]; });
  std::vector<std::int64_t> sorted_rows;
  for (const auto i : order) sorted_rows.push_back(rows[i]);

  const auto cells = cp.geom.cells_per_grid();
  std::unordered_map<std::int64_t, std::size_t> local_of_row;
  for (std::size_t i = 0; i < rows.size(); ++i) local_of_row[rows[i]] = i;
  {
    Lock lock(h5_mutex());
    auto sim = group_open(st.file, "simulation");
    auto g = group_open(sim.get(), label);
    for (std::size_t k = 3; k <= 5; ++k) {
      auto ds = dataset_open(g.get(), kDatasets[k].name);
      std::vector<double> data;
      read_rows(ds.get(), H5T_NATIVE_DOUBLE, sorted_rows, cells * spacetree::kNumFields, data);
      for (std::size_t oi = 0; oi < order.size(); ++oi) {
        auto& grid = d.grids[order[oi]];
        auto& buf = k == 3 ? grid.current : k == 4 ? grid.previous : grid.temp;
        const double* src = data.data() + oi * static_cast<std::size_t>(cells * spacetree::kNumFields);
        for (std::int64_t lin = 0; lin < cells; ++lin) {
          const auto p = grid.layout().interior(lin);
          for (int f = 0; f < spacetree::kNumFields; ++f) buf.at(f, p) = *src++;
        }
      }
    }
    std::vector<std::int32_t> codes;
    {
      auto ds = dataset_open(g.get(), "cell_type");
      read_rows(ds.get(), H5T_NATIVE_INT32, sorted_rows, cells, codes);
    }
    std::vector<double> params;
    {
      auto ds = dataset_open(g.get(), "cell_type_params");
      params = read_all<double>(ds.get(), H5T_NATIVE_DOUBLE);
    }
    std::map<std::pair<std::int64_t, std::int64_t>, spacetree::BcParams> bc;
    for (std::size_t i = 0; i + 6 <= params.size(); i += 6) {
      const auto row = static_cast<std::int64_t>(params[i]);
      if (!local_of_row.count(row)) continue;
      bc[{row, static_cast<std::int64_t>(params[i + 1])}] =
          spacetree::BcParams{{params[i + 2], params[i + 3], params[i + 4]}, params[i + 5]};
    }
    for (std::size_t oi = 0; oi < order.size(); ++oi) {
      auto& grid = d.grids[order[oi]];
      const auto row = sorted_rows[oi];
      for (std::int64_t lin = 0; lin < cells; ++lin) {
        const auto code = codes[oi * static_cast<std::size_t>(cells) + static_cast<std::size_t>(lin)];
        if (code < 0 || code >= spacetree::kNumCellCodes) throw CorruptFileError("invalid cell type " + std::to_string(code));
        const auto cc = static_cast<spacetree::CellCode>(code);
        const auto it = bc.find({row, lin});
        grid.set_cell_type(lin, cc, it == bc.end() ? std::nullopt : std::optional(it->second));
      }
    }
  }
  return d;
}

solver::Simulation load_simulation(const std::string& path, const std::string& label, int ranks) {
  std::vector<RankDomain> domains(static_cast<std::size_t>(ranks));
  comm::World world(ranks);
  GridGeometry geom;
  world.run([&](Communicator& c) {
    auto f = CheckpointFile::open(path, c, false);
    domains[static_cast<std::size_t>(c.rank())] = read_snapshot(f, label, c);
    if (c.rank() == 0) geom = f.common().geom;
    c.barrier();
  });
  return solver::Simulation(geom, std::move(domains), false);
}

void open_branch(const std::string& parent_path, const std::string& label, const std::string& branch_path,
                 bool overwrite) {
  quiet_hdf5();
  Lock lock(h5_mutex());
  if (std::filesystem::exists(branch_path) && !overwrite) throw CheckpointError("checkpoint file exists: " + branch_path);
  if (std::filesystem::exists(branch_path) && std::filesystem::equivalent(branch_path, parent_path)) {
    throw CheckpointError("branch file must differ from its parent");
  }
  auto parent = open_state(parent_path, false);
  if (std::filesystem::exists(branch_path)) {
    const auto it = registry().find(canonical(branch_path));
    if (it != registry().end() && !it->second.expired()) throw CheckpointError("checkpoint file is open: " + branch_path);
  }
  const auto labels = labels_of(parent->file);
  if (std::find(labels.begin(), labels.end(), label) == labels.end()) {
    throw CheckpointError("no snapshot " + label + " in " + parent_path);
  }
  double branch_time = 0.0;
  {
    auto sim = group_open(parent->file, "simulation");
    auto g = group_open(sim.get(), label);
    branch_time = attr_read<double>(g.get(), "elapsed", H5T_NATIVE_DOUBLE);
  }
  hid_t out = -1;
  try {
    Hid fapl = file_access(FileOptions{}.alignment);
    out = check(H5Fcreate(branch_path.c_str(), H5F_ACC_TRUNC, H5P_DEFAULT, fapl.get()), "create " + branch_path);
    check(H5Ocopy(parent->file, "common", out, "common", H5P_DEFAULT, H5P_DEFAULT), "copy common", 0);
    auto sim = group_create(out, "simulation");
    check(H5Ocopy(parent->file, ("simulation/" + label).c_str(), sim.get(), label.c_str(), H5P_DEFAULT, H5P_DEFAULT),
          "copy snapshot", 0);
    Hid root(check(H5Gopen2(out, "/", H5P_DEFAULT), "open root"), H5Gclose);
    attr_write_string(root.get(), "parent_path", std::filesystem::absolute(parent_path).lexically_normal().string());
    attr_write(root.get(), "branch_time", H5T_NATIVE_DOUBLE, &branch_time);
    root = Hid();
    sim = Hid();
    check(H5Fclose(out), "close " + branch_path, 0);
  } catch (...) {
    if (out >= 0) H5Fclose(out);
    std::filesystem::remove(branch_path);
    throw;
  }
}

namespace {

// Tree view over the rows of a stored snapshot.
class FileTreeAccess final : public topology::TreeAccess {
 public:
  FileTreeAccess(const SnapshotIndex& ix, int group) : ix_(ix), group_(static_cast<std::size_t>(group)) {}
  [[nodiscard]] Uid root() const override { return ix_.uids[0]; }
  [[nodiscard]] std::vector<Uid> children(Uid uid) const override {
    const auto row = static_cast<std::size_t>(ix_.row_of.at(uid));
    std::vector<Uid> out;
    if (ix_.children[row * group_] == Uid::sentinel().raw()) return out;
    for (std::size_t m = 0; m < group_; ++m) out.push_back(Uid::from_raw(ix_.children[row * group_ + m]));
    return out;
  }
  [[nodiscard]] spacetree::Box bbox(Uid uid) const override {
    const double* b = &ix_.boxes[static_cast<std::size_t>(ix_.row_of.at(uid)) * 6];
    return {{b[0], b[1], b[2]}, {b[3], b[4], b[5]}};
  }

 private:
  const SnapshotIndex& ix_;
  std::size_t group_;
};

}  // namespace

OfflineSelection offline_select_window(const CheckpointFile& file, const std::string& label,
                                       const topology::WindowQuery& q) {
  const auto& st = file.state();
  const auto ix = load_index(st, label);
  const auto& geom = st.common.geom;
  OfflineSelection out;
  out.selection = topology::select_window(FileTreeAccess(ix, geom.children_per_grid()), geom.s, q);
  const auto cols = geom.cells_per_grid() * spacetree::kNumFields;
  Lock lock(h5_mutex());
  auto sim = group_open(st.file, "simulation");
  auto g = group_open(sim.get(), label);
  auto ds = dataset_open(g.get(), "current_cell_data");
  std::vector<double> row(static_cast<std::size_t>(cols));
  for (const auto& e : out.selection.entries) {
    rows_io(ds.get(), H5T_NATIVE_DOUBLE, ix.row_of.at(e.uid), 1, row.data(), false);
    std::vector<std::vector<double>> per_field(q.fields.size());
    for (const auto lin : e.cells(geom.s)) {
      for (std::size_t f = 0; f < q.fields.size(); ++f) {
        per_field[f].push_back(row[static_cast<std::size_t>(lin * spacetree::kNumFields + q.fields[f])]);
      }
    }
    out.values.push_back(std::move(per_field));
  }
  return out;
}

SnapshotInfo snapshot_info(const CheckpointFile& file, const std::string& label) {
  const auto ix = load_index(file.state(), label);
  const auto group = static_cast<std::size_t>(file.common().geom.children_per_grid());
  SnapshotInfo out;
  out.grids = static_cast<std::int64_t>(ix.uids.size());
  for (std::size_t i = 0; i < ix.uids.size(); ++i) {
    if (ix.children[i * group] == Uid::sentinel().raw()) ++out.leaves;
    out.deepest = std::max(out.deepest, ix.uids[i].depth());
    out.writer_ranks = std::max(out.writer_ranks, static_cast<int>(ix.uids[i].rank()) + 1);
  }
  out.step = ix.step;
  out.elapsed = ix.elapsed;
  return out;
}

void remove_snapshot(CheckpointFile& file, const std::string& label) {
  auto& st = file.state();
  Lock lock(h5_mutex());
  if (!st.writable) throw CheckpointError("checkpoint file opened read-only");
  auto sim = group_open(st.file, "simulation");
  if (H5Lexists(sim.get(), label.c_str(), H5P_DEFAULT) <= 0) return;
  check(H5Ldelete(sim.get(), label.c_str(), H5P_DEFAULT), "delete snapshot " + label, 0);
  check(H5Fflush(st.file, H5F_SCOPE_GLOBAL), "flush", 0);
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read " + path);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char two[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(two, sizeof two, "%02x", md[i]);
    hex += two;
  }
  return hex;
}

}  // namespace trsflow::ckptio
