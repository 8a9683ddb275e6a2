#include "trsflow/steering/collector.hpp"

#include <map>
#include <stdexcept>

namespace trsflow::steering {

std::vector<std::vector<std::vector<double>>> extract_entries(const solver::RankDomain& d,
                                                              const std::vector<topology::WindowEntry>& entries,
                                                              const std::vector<int>& fields) {
  std::vector<std::vector<std::vector<double>>> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    const int i = d.find(e.uid);
    if (i < 0) throw std::runtime_error("grid " + e.uid.hex() + " is not on rank " + std::to_string(d.rank));
    const auto& g = d.grids[static_cast<std::size_t>(i)];
    const auto cells = e.cells(d.geom.s);
    std::vector<std::vector<double>> per_field(fields.size());
    for (std::size_t f = 0; f < fields.size(); ++f) {
      per_field[f].reserve(cells.size());
      for (const auto lin : cells) per_field[f].push_back(g.current.at(fields[f], g.layout().interior(lin)));
    }
    out.push_back(std::move(per_field));
  }
  return out;
}

WindowData Collector::query(const topology::WindowQuery& q) const {
  for (const int f : q.fields) {
    if (f < 0 || f >= spacetree::kNumFields) throw std::invalid_argument("field index out of range");
  }
  WindowData w;
  w.step = sim_.step();
  w.t = sim_.time();
  w.query = q;
  auto& server = sim_.topology();
  const auto& s = sim_.geometry().s;
  w.selection = server.with_repo([&](const topology::TopologyRepo& repo) {
    return topology::select_window(topology::RepoTreeAccess(repo), s, q);
  });
  // Owning rank of every entry, then one request per rank.
  std::map<std::uint32_t, std::vector<std::size_t>> by_rank;
  for (std::size_t e = 0; e < w.selection.entries.size(); ++e) {
    by_rank[server.locate(w.selection.entries[e].uid)].push_back(e);
  }
  w.values.resize(w.selection.entries.size());
  for (const auto& [rank, idx] : by_rank) {
    std::vector<topology::WindowEntry> mine;
    for (const auto e : idx) mine.push_back(w.selection.entries[e]);
    auto recs = extract_entries(sim_.domain(static_cast<int>(rank)), mine, q.fields);
    for (std::size_t k = 0; k < idx.size(); ++k) w.values[idx[k]] = std::move(recs[k]);
  }
  return w;
}

}  // namespace trsflow::steering
