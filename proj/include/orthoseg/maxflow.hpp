#pragma once

#include <vector>

namespace orthoseg {

/// Stand-in for an unbounded capacity (hard constraints).
inline constexpr double infinite_capacity = 1e9;

/// Directed capacitated graph with a distinguished source and sink. Each edge
/// carries a forward and a reverse capacity that share one residual pair.
class FlowNetwork {
public:
    struct Edge {
        int from = 0, to = 0;
        double capacity = 0;
        double reverse_capacity = 0;
    };

    FlowNetwork(int node_count, int source, int sink);

    int node_count() const { return node_count_; }
    int source() const { return source_; }
    int sink() const { return sink_; }
    const std::vector<Edge>& edges() const { return edges_; }

    /// Adds a one-way arc and returns its edge index.
    int add_arc(int from, int to, double capacity) { return add_edge(from, to, capacity, 0); }
    /// Adds arcs a->b and b->a in one residual pair.
    int add_edge(int a, int b, double capacity, double reverse_capacity);
    /// Adds capacity to the arcs source->node and node->sink.
    void add_terminal(int node, double from_source, double to_sink);

    void reserve(std::size_t edges) { edges_.reserve(edges); }

private:
    int node_count_, source_, sink_;
    std::vector<Edge> edges_;
};

struct MaxFlowResult {
    double flow = 0;
    /// 1 for nodes reachable from the source in the final residual graph.
    std::vector<char> source_side;
    /// Net flow along each edge in its forward direction (negative means reverse).
    std::vector<double> edge_flow;
};

/// Boykov-Kolmogorov search-tree max-flow. The cut returned is the source-reachable set.
MaxFlowResult max_flow(const FlowNetwork& network);

/// Capacity of the cut separating `source_side` from the rest.
double cut_capacity(const FlowNetwork& network, const std::vector<char>& source_side);

} // namespace orthoseg
