#include "trsflow/spacetree/uid.hpp"

#include <cstdio>

namespace trsflow::spacetree {

namespace {

constexpr int digit_shift(int level) { return kPathBits - kDigitBits * level; }

}  // namespace

Location Location::from_path(std::span<const std::uint8_t> path) {
  if (path.size() > static_cast<std::size_t>(kMaxDepth)) {
    throw UidError("path longer than maximum depth " + std::to_string(kMaxDepth));
  }
  std::uint64_t bits = 0;
  for (std::size_t l = 0; l < path.size(); ++l) {
    if (path[l] > kMaxDigit) {
      throw UidError("path digit " + std::to_string(path[l]) + " does not fit in 3 bits");
    }
    bits |= std::uint64_t{path[l]} << digit_shift(static_cast<int>(l) + 1);
  }
  bits |= std::uint64_t{path.size()} << kPathBits;
  return Location(bits);
}

int Location::digit(int level) const {
  return static_cast<int>((bits_ >> digit_shift(level)) & kMaxDigit);
}

std::vector<std::uint8_t> Location::path() const {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(depth()));
  for (int l = 1; l <= depth(); ++l) out[l - 1] = static_cast<std::uint8_t>(digit(l));
  return out;
}

Location Location::child(int index) const {
  const int d = depth() + 1;
  if (d > kMaxDepth) throw UidError("child would exceed maximum depth");
  if (index < 0 || static_cast<std::uint32_t>(index) > kMaxDigit) throw UidError("child index out of range");
  const std::uint64_t path = path_bits() | (std::uint64_t(index) << digit_shift(d));
  return Location((std::uint64_t(d) << kPathBits) | path);
}

Location Location::parent() const {
  const int d = depth();
  if (d == 0) throw UidError("root has no parent");
  return ancestor(d - 1);
}

Location Location::ancestor(int d) const {
  if (d < 0 || d > depth()) throw UidError("ancestor depth out of range");
  const int drop = kPathBits - kDigitBits * d;
  const std::uint64_t mask = drop >= 64 ? 0 : (~std::uint64_t{0} << drop);
  const std::uint64_t path = path_bits() & mask & ((std::uint64_t{1} << kPathBits) - 1);
  return Location((std::uint64_t(d) << kPathBits) | path);
}

bool Location::is_ancestor_of(Location other) const {
  return other.depth() > depth() && other.ancestor(depth()) == *this;
}

Uid Uid::encode(std::uint32_t rank, std::uint32_t local, std::uint32_t depth,
                std::span<const std::uint8_t> path) {
  if (rank > kMaxRank) throw UidError("rank " + std::to_string(rank) + " exceeds 12 bits");
  if (local > kMaxLocal) throw UidError("local sequence " + std::to_string(local) + " exceeds 12 bits");
  if (depth > static_cast<std::uint32_t>(kMaxDepth)) throw UidError("depth " + std::to_string(depth) + " exceeds 12");
  if (path.size() != depth) throw UidError("path length does not match depth");
  return make(rank, local, Location::from_path(path));
}

Uid Uid::make(std::uint32_t rank, std::uint32_t local, Location loc) {
  if (rank > kMaxRank) throw UidError("rank " + std::to_string(rank) + " exceeds 12 bits");
  if (local > kMaxLocal) throw UidError("local sequence " + std::to_string(local) + " exceeds 12 bits");
  const std::uint64_t v = (std::uint64_t{rank} << (kLocalBits + kDepthBits + kPathBits)) |
                          (std::uint64_t{local} << (kDepthBits + kPathBits)) | loc.bits();
  return Uid(v);
}

UidFields Uid::decode() const {
  if (is_sentinel()) throw UidError("cannot decode the sentinel uid");
  const Location loc = location();
  if (loc.depth() > kMaxDepth) throw UidError("invalid uid: depth field " + std::to_string(loc.depth()));
  // Digits below the encoded depth must be zero.
  if (loc.ancestor(loc.depth()).bits() != loc.bits()) throw UidError("invalid uid: stray path bits");
  return UidFields{rank(), local(), static_cast<std::uint32_t>(loc.depth()), loc.path()};
}

std::string Uid::hex() const {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(value_));
  return buf;
}

}  // namespace trsflow::spacetree
