#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "finder/graph.hpp"
#include "finder/tensor.hpp"

namespace finder {

// Several graphs packed into one disconnected graph, with the index lists the
// model's gather/segment primitives consume.
struct GraphBatch {
  Domain domain = Domain::kFormula;
  std::size_t num_graphs = 0;
  std::size_t num_nodes = 0;
  std::size_t feature_dim = 0;
  std::vector<double> node_features;  // num_nodes x feature_dim
  Index node_graph;                   // graph of each node
  std::vector<double> graph_size;     // nodes per graph
  std::vector<double> node_graph_size;  // nodes in the graph of each node
  Index graph_offset;                 // first node of each graph
  Index src, dst;                     // directed edges, global node ids
  std::vector<double> edge_features;  // edges x 20, crystal domain
  std::vector<double> out_degree;     // edges leaving each node
  // Every ordered (row, col) pair of nodes in the same graph, self pairs included.
  Index pair_row, pair_col;
  Index edge_pair;  // pair index of each edge

  std::size_t num_edges() const { return src.size(); }
};

inline GraphBatch make_batch(const std::vector<const FormulaGraph*>& graphs) {
  if (graphs.empty()) throw std::invalid_argument("make_batch: no graphs");
  GraphBatch b;
  b.domain = graphs.front()->domain;
  b.feature_dim = graphs.front()->feature_dim;
  b.num_graphs = graphs.size();
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const auto& g = *graphs[gi];
    if (g.domain != b.domain) throw std::invalid_argument("make_batch: mixed graph domains");
    if (g.feature_dim != b.feature_dim) throw ShapeError("make_batch: node feature widths differ");
    if (g.num_nodes == 0) throw std::invalid_argument("make_batch: graph with no nodes");
    if (g.domain == Domain::kCrystal && g.edge_features.size() != g.edges.size() * kGaussianCount)
      throw ShapeError("make_batch: crystal graph edge features do not match its edges");
    const std::size_t off = b.num_nodes;
    const std::size_t n = g.num_nodes;
    const std::size_t pair_off = b.pair_row.size();
    b.graph_offset.push_back(off);
    b.graph_size.push_back(static_cast<double>(n));
    b.node_features.insert(b.node_features.end(), g.node_features.begin(), g.node_features.end());
    for (std::size_t i = 0; i < n; ++i) {
      b.node_graph.push_back(gi);
      b.node_graph_size.push_back(static_cast<double>(n));
      b.out_degree.push_back(0.0);
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t l = 0; l < n; ++l) {
        b.pair_row.push_back(off + i);
        b.pair_col.push_back(off + l);
      }
    for (const auto& e : g.edges) {
      if (e.src >= n || e.dst >= n || e.src == e.dst) throw std::invalid_argument("make_batch: invalid edge");
      b.src.push_back(off + e.src);
      b.dst.push_back(off + e.dst);
      b.edge_pair.push_back(pair_off + e.src * n + e.dst);
      b.out_degree[off + e.src] += 1.0;
    }
    b.edge_features.insert(b.edge_features.end(), g.edge_features.begin(), g.edge_features.end());
    b.num_nodes += n;
  }
  return b;
}

inline GraphBatch make_batch(const FormulaGraph& g) { return make_batch(std::vector<const FormulaGraph*>{&g}); }

}  // namespace finder
