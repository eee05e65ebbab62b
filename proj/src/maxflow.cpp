#include "orthoseg/maxflow.hpp"

#include <cmath>
#include <deque>
#include <limits>

#include "orthoseg/error.hpp"

namespace orthoseg {

FlowNetwork::FlowNetwork(int node_count, int source, int sink) : node_count_(node_count), source_(source), sink_(sink) {
    require(node_count >= 2, "flow network needs at least two nodes");
    require(source >= 0 && source < node_count && sink >= 0 && sink < node_count, "terminal out of range");
    require(source != sink, "source and sink must differ");
}

int FlowNetwork::add_edge(int a, int b, double capacity, double reverse_capacity) {
    require(a >= 0 && a < node_count_ && b >= 0 && b < node_count_, "arc endpoint out of range");
    require(std::isfinite(capacity) && std::isfinite(reverse_capacity) && capacity >= 0 && reverse_capacity >= 0,
            "capacities must be finite and non-negative");
    edges_.push_back({a, b, capacity, reverse_capacity});
    return static_cast<int>(edges_.size()) - 1;
}

void FlowNetwork::add_terminal(int node, double from_source, double to_sink) {
    if (from_source > 0)
        add_arc(source_, node, from_source);
    if (to_sink > 0)
        add_arc(node, sink_, to_sink);
}

namespace {

class Solver {
public:
    explicit Solver(const FlowNetwork& net)
        : n_(net.node_count()), s_(net.source()), t_(net.sink()), first_(n_, -1), parent_(n_, none), tree_(n_, 0),
          ts_(n_, 0), dist_(n_, 0), in_active_(n_, 0), cursor_(n_, -1) {
        const auto& edges = net.edges();
        to_.resize(edges.size() * 2);
        next_.resize(edges.size() * 2);
        cap_.resize(edges.size() * 2);
        // Arcs are linked in insertion order so the search is deterministic.
        std::vector<int> last(n_, -1);
        auto link = [&](int node, int arc) {
            next_[arc] = -1;
            if (last[node] < 0)
                first_[node] = arc;
            else
                next_[last[node]] = arc;
            last[node] = arc;
        };
        for (std::size_t i = 0; i < edges.size(); ++i) {
            const auto& e = edges[i];
            const int a = static_cast<int>(2 * i);
            to_[a] = e.to;
            cap_[a] = e.capacity;
            to_[a + 1] = e.from;
            cap_[a + 1] = e.reverse_capacity;
            link(e.from, a);
            link(e.to, a + 1);
        }
    }

    double run() {
        tree_[s_] = S;
        parent_[s_] = terminal;
        tree_[t_] = T;
        parent_[t_] = terminal;
        activate(s_);
        activate(t_);
        double flow = 0;
        while (true) {
            const int mid = grow();
            if (mid < 0)
                break;
            ++time_;
            flow += augment(mid);
            adopt();
        }
        return flow;
    }

    std::vector<char> source_side() const {
        std::vector<char> seen(n_, 0);
        std::deque<int> q{s_};
        seen[s_] = 1;
        while (!q.empty()) {
            const int v = q.front();
            q.pop_front();
            for (int a = first_[v]; a >= 0; a = next_[a])
                if (cap_[a] > 0 && !seen[to_[a]]) {
                    seen[to_[a]] = 1;
                    q.push_back(to_[a]);
                }
        }
        return seen;
    }

    double residual(int arc) const { return cap_[arc]; }

private:
    static constexpr int none = -1, terminal = -2, orphan = -3;
    static constexpr char S = 1, T = 2;

    // Rescans v from its first arc; a node keeps its cursor only while it stays active.
    void activate(int v) {
        cursor_[v] = first_[v];
        if (!in_active_[v]) {
            in_active_[v] = 1;
            active_.push_back(v);
        }
    }

    // Returns the arc joining the two trees (oriented S -> T), or -1 when no path remains.
    int grow() {
        while (!active_.empty()) {
            const int v = active_.front();
            if (tree_[v] == 0) {
                active_.pop_front();
                in_active_[v] = 0;
                continue;
            }
            for (int a = cursor_[v]; a >= 0; a = next_[a]) {
                cursor_[v] = a;
                const int u = to_[a];
                if (tree_[v] == S) {
                    if (cap_[a] <= 0)
                        continue;
                    if (tree_[u] == 0) {
                        tree_[u] = S;
                        parent_[u] = a ^ 1;
                        ts_[u] = ts_[v];
                        dist_[u] = dist_[v] + 1;
                        activate(u);
                    } else if (tree_[u] == T) {
                        return a;
                    }
                } else {
                    if (cap_[a ^ 1] <= 0)
                        continue;
                    if (tree_[u] == 0) {
                        tree_[u] = T;
                        parent_[u] = a ^ 1;
                        ts_[u] = ts_[v];
                        dist_[u] = dist_[v] + 1;
                        activate(u);
                    } else if (tree_[u] == S) {
                        return a ^ 1;
                    }
                }
            }
            active_.pop_front();
            in_active_[v] = 0;
        }
        return -1;
    }

    double augment(int mid) {
        double f = cap_[mid];
        for (int v = to_[mid ^ 1]; parent_[v] != terminal; v = to_[parent_[v]])
            f = std::min(f, cap_[parent_[v] ^ 1]);
        for (int v = to_[mid]; parent_[v] != terminal; v = to_[parent_[v]])
            f = std::min(f, cap_[parent_[v]]);

        cap_[mid] -= f;
        cap_[mid ^ 1] += f;
        for (int v = to_[mid ^ 1]; parent_[v] != terminal;) {
            const int a = parent_[v];
            const int up = to_[a];
            cap_[a ^ 1] -= f;
            cap_[a] += f;
            if (cap_[a ^ 1] <= 0) {
                cap_[a ^ 1] = 0;
                parent_[v] = orphan;
                orphans_.push_back(v);
            }
            v = up;
        }
        for (int v = to_[mid]; parent_[v] != terminal;) {
            const int a = parent_[v];
            const int up = to_[a];
            cap_[a] -= f;
            cap_[a ^ 1] += f;
            if (cap_[a] <= 0) {
                cap_[a] = 0;
                parent_[v] = orphan;
                orphans_.push_back(v);
            }
            v = up;
        }
        return f;
    }

    // Distance to the tree root through valid parents, or max when the chain hits an orphan.
    int origin_distance(int u) {
        constexpr int inf = std::numeric_limits<int>::max();
        int d = 0;
        int j = u;
        while (true) {
            if (ts_[j] == time_) {
                d += dist_[j];
                break;
            }
            const int a = parent_[j];
            if (a == terminal) {
                ts_[j] = time_;
                dist_[j] = 0;
                break;
            }
            if (a < 0)
                return inf;
            ++d;
            j = to_[a];
        }
        int dd = d;
        for (j = u; ts_[j] != time_; j = to_[parent_[j]]) {
            ts_[j] = time_;
            dist_[j] = dd--;
        }
        return d;
    }

    void adopt() {
        constexpr int inf = std::numeric_limits<int>::max();
        while (!orphans_.empty()) {
            const int v = orphans_.front();
            orphans_.pop_front();
            const char tr = tree_[v];
            int best = none, best_d = inf;
            for (int a = first_[v]; a >= 0; a = next_[a]) {
                const int u = to_[a];
                if (tree_[u] != tr)
                    continue;
                const double c = tr == S ? cap_[a ^ 1] : cap_[a];
                if (c <= 0)
                    continue;
                const int d = origin_distance(u);
                if (d < best_d) {
                    best_d = d;
                    best = a;
                }
            }
            if (best != none) {
                parent_[v] = best;
                ts_[v] = time_;
                dist_[v] = best_d + 1;
                continue;
            }
            for (int a = first_[v]; a >= 0; a = next_[a]) {
                const int u = to_[a];
                if (tree_[u] != tr)
                    continue;
                const double c = tr == S ? cap_[a ^ 1] : cap_[a];
                if (c > 0)
                    activate(u);
                const int pu = parent_[u];
                if (pu >= 0 && to_[pu] == v) {
                    parent_[u] = orphan;
                    orphans_.push_back(u);
                }
            }
            tree_[v] = 0;
            parent_[v] = none;
        }
    }

    int n_, s_, t_;
    std::vector<int> first_, to_, next_;
    std::vector<double> cap_;
    std::vector<int> parent_;
    std::vector<char> tree_;
    std::vector<long long> ts_;
    std::vector<int> dist_;
    std::vector<char> in_active_;
    std::vector<int> cursor_;
    std::deque<int> active_, orphans_;
    long long time_ = 0;
};

} // namespace

MaxFlowResult max_flow(const FlowNetwork& network) {
    Solver solver(network);
    MaxFlowResult r;
    r.flow = solver.run();
    r.source_side = solver.source_side();
    const auto& edges = network.edges();
    r.edge_flow.resize(edges.size());
    for (std::size_t i = 0; i < edges.size(); ++i)
        r.edge_flow[i] = edges[i].capacity - solver.residual(static_cast<int>(2 * i));
    return r;
}

double cut_capacity(const FlowNetwork& network, const std::vector<char>& side) {
    double c = 0;
    for (const auto& e : network.edges()) {
        if (side[e.from] && !side[e.to])
            c += e.capacity;
        if (side[e.to] && !side[e.from])
            c += e.reverse_capacity;
    }
    return c;
}

} // namespace orthoseg
