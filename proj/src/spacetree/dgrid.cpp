#include "trsflow/spacetree/dgrid.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

namespace trsflow::spacetree {

const char* to_string(CellCode c) {
  switch (c) {
    case CellCode::kFluid: return "fluid";
    case CellCode::kObstacle: return "obstacle";
    case CellCode::kInflow: return "inflow";
    case CellCode::kOutflow: return "outflow";
    case CellCode::kWallNoSlip: return "wall_noslip";
    case CellCode::kWallSlip: return "wall_slip";
    case CellCode::kTempDirichlet: return "temp_dirichlet";
  }
  return "unknown";
}

CellCode cell_code_from_string(const std::string& name) {
  for (int c = 0; c < kNumCellCodes; ++c) {
    if (name == to_string(static_cast<CellCode>(c))) return static_cast<CellCode>(c);
  }
  throw std::invalid_argument("unknown cell type '" + name + "'");
}

DGrid::DGrid(Uid uid, Box bbox, Index3 s)
    : current(Layout(s)), previous(Layout(s)), temp(Layout(s)),
      uid_(uid), bbox_(bbox), layout_(s),
      codes_(layout_.padded(), static_cast<std::uint8_t>(CellCode::kFluid)),
      param_slot_(static_cast<std::size_t>(layout_.cells()), 0) {}

void DGrid::set_cell_type(std::int64_t lin, CellCode c, std::optional<BcParams> params) {
  codes_[static_cast<std::size_t>(layout_.interior(lin))] = static_cast<std::uint8_t>(c);
  auto& slot = param_slot_[static_cast<std::size_t>(lin)];
  if (!params) {
    slot = 0;
    return;
  }
  const auto it = std::find(params_.begin(), params_.end(), *params);
  if (it != params_.end()) {
    slot = static_cast<std::uint32_t>(it - params_.begin()) + 1;
  } else {
    params_.push_back(*params);
    slot = static_cast<std::uint32_t>(params_.size());
  }
}

std::optional<BcParams> DGrid::params(std::int64_t lin) const {
  const auto slot = param_slot_[static_cast<std::size_t>(lin)];
  if (slot == 0) return std::nullopt;
  return params_[slot - 1];
}

void DGrid::compact_params() {
  std::vector<BcParams> kept;
  std::vector<std::uint32_t> remap(params_.size() + 1, 0);
  for (auto& slot : param_slot_) {
    if (slot == 0) continue;
    if (remap[slot] == 0) {
      kept.push_back(params_[slot - 1]);
      remap[slot] = static_cast<std::uint32_t>(kept.size());
    }
    slot = remap[slot];
  }
  params_ = std::move(kept);
}

std::span<double> DGrid::work(int channel) {
  ensure_work(channel + 1);
  return work_[static_cast<std::size_t>(channel)];
}

std::span<const double> DGrid::work(int channel) const {
  return work_.at(static_cast<std::size_t>(channel));
}

void DGrid::ensure_work(int channels) {
  while (static_cast<int>(work_.size()) < channels) work_.emplace_back(layout_.padded(), 0.0);
}

bool DGrid::interior_equal(const DGrid& other) const {
  if (uid_ != other.uid_ || !(layout_ == other.layout_) || !(bbox_ == other.bbox_)) return false;
  for (std::int64_t lin = 0; lin < layout_.cells(); ++lin) {
    const auto i = layout_.interior(lin);
    if (code(i) != other.code(i)) return false;
    if (params(lin) != other.params(lin)) return false;
    for (int f = 0; f < kNumFields; ++f) {
      const double a[3] = {current.at(f, i), previous.at(f, i), temp.at(f, i)};
      const double b[3] = {other.current.at(f, i), other.previous.at(f, i), other.temp.at(f, i)};
      if (std::memcmp(a, b, sizeof a) != 0) return false;
    }
  }
  return true;
}

}  // namespace trsflow::spacetree
