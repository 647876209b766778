#pragma once

#include <random>
#include <string>

#include "epitrace/epi_graph.hpp"

namespace testgen {

// Random graph that passes the structural checks: unique ids, no self-loops,
// no duplicate edges, and only whitelisted (relation, src, dst) triples.
inline epitrace::graph::EpistemicGraph random_graph(std::mt19937_64& rng, std::size_t max_nodes = 12,
                                                    double edge_density = 0.35) {
  using namespace epitrace::graph;
  std::uniform_int_distribution<std::size_t> count(0, max_nodes);
  // H, T, E and J dominate, as in annotated traces.
  std::discrete_distribution<int> type_pick({5, 4, 4, 3, 1.5, 0.5, 0.5});
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  EpistemicGraph g;
  g.trace_id = "random";
  const auto n = count(rng);
  std::uniform_int_distribution<int> time_pick(0, static_cast<int>(2 * n + 1));
  for (std::size_t i = 0; i < n; ++i) {
    const auto type = kAllNodeTypes[static_cast<std::size_t>(type_pick(rng))];
    const int t = time_pick(rng);
    g.nodes.push_back(make_node("N" + std::to_string(i + 1), type, t, "node", {Support{t, "q"}}));
  }
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t d = 0; d < n; ++d) {
      if (s == d) continue;
      for (const auto rel : kAllRelations) {
        if (!allowed(rel, *g.nodes[s].type, *g.nodes[d].type)) continue;
        if (coin(rng) >= edge_density) continue;
        const int t = std::max(g.nodes[s].time, g.nodes[d].time);
        g.edges.push_back(make_edge(g.nodes[s].node_id, g.nodes[d].node_id, rel, t, {Support{t, "q"}}));
      }
    }
  }
  return g;
}

}  // namespace testgen
