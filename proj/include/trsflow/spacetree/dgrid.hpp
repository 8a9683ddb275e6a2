#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "trsflow/spacetree/geometry.hpp"
#include "trsflow/spacetree/uid.hpp"

namespace trsflow::spacetree {

/// Field order inside every cell-data record.
enum Field : int { kU = 0, kV = 1, kW = 2, kP = 3, kT = 4 };
inline constexpr int kNumFields = 5;

enum class CellCode : std::uint8_t {
  kFluid = 0,
  kObstacle = 1,
  kInflow = 2,
  kOutflow = 3,
  kWallNoSlip = 4,
  kWallSlip = 5,
  kTempDirichlet = 6,
};
inline constexpr int kNumCellCodes = 7;

[[nodiscard]] const char* to_string(CellCode c);
[[nodiscard]] CellCode cell_code_from_string(const std::string& name);
[[nodiscard]] inline bool is_fluid(CellCode c) { return c == CellCode::kFluid; }
/// Codes that carry a parameter record (velocity and/or temperature).
[[nodiscard]] inline bool needs_params(CellCode c) {
  return c == CellCode::kInflow || c == CellCode::kTempDirichlet;
}

struct BcParams {
  Vec3 velocity{0, 0, 0};
  double temperature = 0.0;
  bool operator==(const BcParams&) const = default;
};

/// Index arithmetic for an s_x*s_y*s_z block surrounded by a 1-cell halo.
/// Interior indices run over [0, s), halo cells sit at -1 and s.
class Layout {
 public:
  Layout() = default;
  explicit Layout(Index3 s)
      : s_(s), n_{s[0] + 2, s[1] + 2, s[2] + 2},
        stride_{1, static_cast<std::ptrdiff_t>(s[0] + 2),
                static_cast<std::ptrdiff_t>(s[0] + 2) * (s[1] + 2)} {}

  [[nodiscard]] const Index3& s() const { return s_; }
  [[nodiscard]] std::ptrdiff_t stride(int axis) const { return stride_[static_cast<std::size_t>(axis)]; }
  [[nodiscard]] std::size_t padded() const {
    return static_cast<std::size_t>(n_[0]) * n_[1] * n_[2];
  }
  [[nodiscard]] std::int64_t cells() const { return std::int64_t{s_[0]} * s_[1] * s_[2]; }
  [[nodiscard]] std::ptrdiff_t idx(int i, int j, int k) const {
    return (i + 1) + stride_[1] * (j + 1) + stride_[2] * (k + 1);
  }
  /// Padded index of the interior cell with linear index x + s_x*(y + s_y*z).
  [[nodiscard]] std::ptrdiff_t interior(std::int64_t lin) const {
    const int i = static_cast<int>(lin % s_[0]);
    const int j = static_cast<int>((lin / s_[0]) % s_[1]);
    const int k = static_cast<int>(lin / (std::int64_t{s_[0]} * s_[1]));
    return idx(i, j, k);
  }
  /// Inverse of interior(); `padded` must address an interior cell.
  [[nodiscard]] std::int64_t linear(std::ptrdiff_t padded) const {
    const auto i = padded % n_[0] - 1;
    const auto j = (padded / n_[0]) % n_[1] - 1;
    const auto k = padded / (std::ptrdiff_t{n_[0]} * n_[1]) - 1;
    return i + s_[0] * (j + std::int64_t{s_[1]} * k);
  }
  [[nodiscard]] bool operator==(const Layout& o) const { return s_ == o.s_; }

 private:
  Index3 s_{0, 0, 0};
  Index3 n_{0, 0, 0};
  std::array<std::ptrdiff_t, 3> stride_{0, 0, 0};
};

/// Five padded scalar arrays [u, v, w, p, T].
class FieldBuffer {
 public:
  FieldBuffer() = default;
  explicit FieldBuffer(const Layout& layout)
      : padded_(layout.padded()), data_(padded_ * kNumFields, 0.0) {}

  [[nodiscard]] std::span<double> field(int f) { return {data_.data() + f * padded_, padded_}; }
  [[nodiscard]] std::span<const double> field(int f) const { return {data_.data() + f * padded_, padded_}; }
  [[nodiscard]] double& at(int f, std::ptrdiff_t i) { return data_[f * padded_ + static_cast<std::size_t>(i)]; }
  [[nodiscard]] double at(int f, std::ptrdiff_t i) const { return data_[f * padded_ + static_cast<std::size_t>(i)]; }
  [[nodiscard]] std::span<double> raw() { return data_; }
  [[nodiscard]] std::span<const double> raw() const { return data_; }

  bool operator==(const FieldBuffer&) const = default;

 private:
  std::size_t padded_ = 0;
  std::vector<double> data_;
};

/// Data grid: s_x*s_y*s_z cells plus a halo of thickness one. Holds the three
/// field buffers (current/previous/temp), per-cell boundary codes (halo
/// included) and the parameter records of boundary cells.
class DGrid {
 public:
  DGrid() = default;
  DGrid(Uid uid, Box bbox, Index3 s);

  [[nodiscard]] Uid uid() const { return uid_; }
  void set_uid(Uid uid) { uid_ = uid; }
  [[nodiscard]] Location location() const { return uid_.location(); }
  [[nodiscard]] int depth() const { return uid_.depth(); }
  [[nodiscard]] const Box& bbox() const { return bbox_; }
  [[nodiscard]] const Layout& layout() const { return layout_; }
  [[nodiscard]] std::int64_t cells() const { return layout_.cells(); }

  [[nodiscard]] CellCode code(std::ptrdiff_t padded_index) const {
    return static_cast<CellCode>(codes_[static_cast<std::size_t>(padded_index)]);
  }
  void set_halo_code(std::ptrdiff_t padded_index, CellCode c) {
    codes_[static_cast<std::size_t>(padded_index)] = static_cast<std::uint8_t>(c);
  }
  /// Sets the type of interior cell `lin`; params are stored when given.
  void set_cell_type(std::int64_t lin, CellCode c, std::optional<BcParams> params = std::nullopt);
  [[nodiscard]] std::optional<BcParams> params(std::int64_t lin) const;
  [[nodiscard]] std::span<const std::uint8_t> codes() const { return codes_; }
  /// Drops parameter records no longer referenced by any cell.
  void compact_params();

  FieldBuffer current;
  FieldBuffer previous;
  FieldBuffer temp;

  /// Padded scratch arrays used by the solver; created on demand.
  [[nodiscard]] std::span<double> work(int channel);
  [[nodiscard]] std::span<const double> work(int channel) const;
  void ensure_work(int channels);

  /// The step result is written into `previous`; swapping makes it current
  /// and leaves the pre-step state in `previous`.
  void rotate() { std::swap(current, previous); }

  /// Element-wise comparison of interior state (all buffers, codes and params).
  [[nodiscard]] bool interior_equal(const DGrid& other) const;

 private:
  Uid uid_;
  Box bbox_;
  Layout layout_;
  std::vector<std::uint8_t> codes_;
  std::vector<std::uint32_t> param_slot_;  // per interior cell, 0 = none
  std::vector<BcParams> params_;
  std::vector<std::vector<double>> work_;
};

}  // namespace trsflow::spacetree
