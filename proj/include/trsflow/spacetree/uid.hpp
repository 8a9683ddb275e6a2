#pragma once

#include <compare>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace trsflow::spacetree {

/// Bit layout of a 64-bit grid identifier:
///   [63:52] rank, [51:40] rank-local sequence, [39:36] depth,
///   [35:0]  path digits (3 bits per level, coarsest level most significant).
inline constexpr int kRankBits = 12;
inline constexpr int kLocalBits = 12;
inline constexpr int kDepthBits = 4;
inline constexpr int kPathBits = 36;
inline constexpr int kDigitBits = 3;
inline constexpr int kMaxDepth = kPathBits / kDigitBits;
inline constexpr std::uint32_t kMaxRank = (1u << kRankBits) - 1;
inline constexpr std::uint32_t kMaxLocal = (1u << kLocalBits) - 1;
inline constexpr std::uint32_t kMaxDigit = (1u << kDigitBits) - 1;

class UidError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Position of a grid in the tree, independent of where it resides:
/// the low 40 bits of a Uid (depth + path).
class Location {
 public:
  constexpr Location() = default;
  static constexpr Location from_bits(std::uint64_t bits) { return Location(bits); }

  static Location root() { return Location(0); }
  static Location from_path(std::span<const std::uint8_t> path);

  [[nodiscard]] constexpr std::uint64_t bits() const { return bits_; }
  [[nodiscard]] constexpr int depth() const {
    return static_cast<int>((bits_ >> kPathBits) & ((1u << kDepthBits) - 1));
  }
  [[nodiscard]] constexpr std::uint64_t path_bits() const {
    return bits_ & ((std::uint64_t{1} << kPathBits) - 1);
  }
  /// Child index taken at `level` (1-based, level <= depth()).
  [[nodiscard]] int digit(int level) const;
  [[nodiscard]] std::vector<std::uint8_t> path() const;

  [[nodiscard]] Location child(int index) const;
  [[nodiscard]] Location parent() const;
  /// Ancestor at the given depth (depth <= this->depth()).
  [[nodiscard]] Location ancestor(int depth) const;
  [[nodiscard]] bool is_ancestor_of(Location other) const;

  constexpr auto operator<=>(const Location&) const = default;

 private:
  constexpr explicit Location(std::uint64_t bits) : bits_(bits) {}
  std::uint64_t bits_ = 0;
};

struct UidFields {
  std::uint32_t rank = 0;
  std::uint32_t local = 0;
  std::uint32_t depth = 0;
  std::vector<std::uint8_t> path;

  bool operator==(const UidFields&) const = default;
};

class Uid {
 public:
  constexpr Uid() = default;

  /// All bits set. UID 0 is the valid root on rank 0, so "no grid" needs its own value.
  static constexpr Uid sentinel() { return Uid(~std::uint64_t{0}); }
  static constexpr Uid from_raw(std::uint64_t raw) { return Uid(raw); }

  static Uid encode(std::uint32_t rank, std::uint32_t local, std::uint32_t depth,
                    std::span<const std::uint8_t> path);
  static Uid make(std::uint32_t rank, std::uint32_t local, Location loc);

  [[nodiscard]] UidFields decode() const;

  [[nodiscard]] constexpr std::uint64_t raw() const { return value_; }
  [[nodiscard]] constexpr bool is_sentinel() const { return value_ == ~std::uint64_t{0}; }
  [[nodiscard]] constexpr std::uint32_t rank() const {
    return static_cast<std::uint32_t>(value_ >> (kLocalBits + kDepthBits + kPathBits));
  }
  [[nodiscard]] constexpr std::uint32_t local() const {
    return static_cast<std::uint32_t>((value_ >> (kDepthBits + kPathBits)) & kMaxLocal);
  }
  [[nodiscard]] constexpr Location location() const {
    return Location::from_bits(value_ & ((std::uint64_t{1} << (kDepthBits + kPathBits)) - 1));
  }
  [[nodiscard]] constexpr int depth() const { return location().depth(); }

  [[nodiscard]] std::string hex() const;

  constexpr auto operator<=>(const Uid&) const = default;

 private:
  constexpr explicit Uid(std::uint64_t v) : value_(v) {}
  std::uint64_t value_ = 0;
};

/// Depth-first Z-order key. Path digits are left aligned over the full 36-bit
/// path so that any ancestor sorts before its descendants, and siblings follow
/// child-index order.
[[nodiscard]] constexpr std::uint64_t lebesgue_key(Location loc) {
  return (loc.path_bits() << kDepthBits) | static_cast<std::uint64_t>(loc.depth());
}
[[nodiscard]] constexpr std::uint64_t lebesgue_key(Uid uid) { return lebesgue_key(uid.location()); }

}  // namespace trsflow::spacetree

template <>
struct std::hash<trsflow::spacetree::Uid> {
  std::size_t operator()(const trsflow::spacetree::Uid& u) const noexcept {
    return std::hash<std::uint64_t>{}(u.raw());
  }
};

template <>
struct std::hash<trsflow::spacetree::Location> {
  std::size_t operator()(const trsflow::spacetree::Location& l) const noexcept {
    return std::hash<std::uint64_t>{}(l.bits());
  }
};
