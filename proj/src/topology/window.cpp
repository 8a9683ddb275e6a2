#include "trsflow/topology/window.hpp"

#include <algorithm>

namespace trsflow::topology {

using spacetree::lebesgue_key;

namespace {

struct Candidate {
  Uid uid;
  Box bbox;
  Index3 lo{0, 0, 0};  // first/last cell with centre inside the window, per axis
  Index3 hi{-1, -1, -1};
};

Candidate make_candidate(Uid uid, const Box& bbox, const Index3& s, const Box& w) {
  Candidate c{uid, bbox};
  for (int a = 0; a < 3; ++a) {
    const double h = bbox.extent(a) / s[a];
    int lo = s[a];
    int hi = -1;
    for (int i = 0; i < s[a]; ++i) {
      const double x = bbox.lo[a] + (i + 0.5) * h;
      if (x >= w.lo[a] && x <= w.hi[a]) {
        lo = std::min(lo, i);
        hi = i;
      }
    }
    c.lo[a] = lo;
    c.hi[a] = hi;
  }
  return c;
}

int first_multiple(int lo, int stride) { return (lo + stride - 1) / stride * stride; }

WindowEntry sample(const Candidate& c, int stride) {
  WindowEntry e{c.uid, c.bbox, stride};
  for (int a = 0; a < 3; ++a) {
    const int f = first_multiple(c.lo[a], stride);
    e.first[a] = f;
    e.count[a] = c.hi[a] >= f ? (c.hi[a] - f) / stride + 1 : 0;
  }
  return e;
}

std::int64_t count_points(const std::vector<Candidate>& level, int stride) {
  std::int64_t n = 0;
  for (const auto& c : level) n += sample(c, stride).points();
  return n;
}

}  // namespace

std::vector<std::int64_t> WindowEntry::cells(const Index3& s) const {
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(points()));
  for (int k = 0; k < count[2]; ++k) {
    for (int j = 0; j < count[1]; ++j) {
      for (int i = 0; i < count[0]; ++i) {
        const std::int64_t x = first[0] + i * stride;
        const std::int64_t y = first[1] + j * stride;
        const std::int64_t z = first[2] + k * stride;
        out.push_back(x + s[0] * (y + std::int64_t{s[1]} * z));
      }
    }
  }
  return out;
}

WindowSelection select_window(const TreeAccess& tree, const Index3& s, const WindowQuery& q) {
  WindowSelection sel;
  if (q.budget < 1) return sel;
  const Uid root = tree.root();
  const Box rb = tree.bbox(root);
  if (!rb.touches(q.window)) return sel;

  std::vector<std::vector<Candidate>> levels;
  levels.push_back({make_candidate(root, rb, s, q.window)});
  for (;;) {
    std::vector<Candidate> next;
    bool descended = false;
    for (const auto& c : levels.back()) {
      const auto kids = tree.children(c.uid);
      if (kids.empty()) {
        next.push_back(c);
        continue;
      }
      descended = true;
      for (const Uid k : kids) {
        const Box kb = tree.bbox(k);
        if (kb.touches(q.window)) next.push_back(make_candidate(k, kb, s, q.window));
      }
    }
    if (!descended) break;
    levels.push_back(std::move(next));
  }

  const int max_stride = std::max({s[0], s[1], s[2]});
  for (int level = static_cast<int>(levels.size()) - 1; level >= 0 && sel.level < 0; --level) {
    const auto& cand = levels[static_cast<std::size_t>(level)];
    for (int stride = 1; stride <= max_stride; ++stride) {
      if (count_points(cand, stride) <= q.budget) {
        sel.level = level;
        sel.stride = stride;
        break;
      }
    }
  }
  if (sel.level < 0) return sel;

  for (const auto& c : levels[static_cast<std::size_t>(sel.level)]) {
    auto e = sample(c, sel.stride);
    if (e.points() == 0) continue;
    sel.point_count += e.points();
    sel.entries.push_back(e);
  }
  std::sort(sel.entries.begin(), sel.entries.end(),
            [](const WindowEntry& a, const WindowEntry& b) { return lebesgue_key(a.uid) < lebesgue_key(b.uid); });
  return sel;
}

}  // namespace trsflow::topology
