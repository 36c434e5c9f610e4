#include <limits>
#include <queue>
#include <utility>
#include <vector>

struct Edge {
    int to;
    long long w;
};

using Graph = std::vector<std::vector<Edge>>;

std::vector<long long> dijkstra(const Graph& g, int src) {
    const long long inf = std::numeric_limits<long long>::max();
    std::vector<long long> dist(g.size(), inf);
    using Item = std::pair<long long, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
    dist[src] = 0;
    pq.push({0, src});
    while (!pq.empty()) {
        auto [d, u] = pq.top();
        pq.pop();
        if (d != dist[u]) {
            continue;
        }
        for (const Edge& e : g[u]) {
            if (dist[u] + e.w < dist[e.to]) {
                dist[e.to] = dist[u] + e.w;
                pq.push({dist[e.to], e.to});
            }
        }
    }
    return dist;
}

std::vector<int> topo_sort(const std::vector<std::vector<int>>& adj) {
    std::vector<int> indeg(adj.size(), 0), order;
    for (const auto& out : adj) {
        for (int v : out) {
            ++indeg[v];
        }
    }
    std::queue<int> q;
    for (int v = 0; v < static_cast<int>(adj.size()); ++v) {
        if (indeg[v] == 0) {
            q.push(v);
        }
    }
    while (!q.empty()) {
        int u = q.front();
        q.pop();
        order.push_back(u);
        for (int v : adj[u]) {
            if (--indeg[v] == 0) {
                q.push(v);
            }
        }
    }
    if (order.size() != adj.size()) {
        order.clear();
    }
    return order;
}
