#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. Nothing here calls into the library's graph or tensor kernels.

#include "msg3d/graph_core.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <random>
#include <set>
#include <utility>
#include <vector>

namespace oracle {

using Edges = std::vector<std::pair<int, int>>;

inline std::vector<std::vector<int>> adjacency_lists(int n, const Edges& edges) {
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
  for (auto [a, b] : edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  return adj;
}

inline std::vector<int> bfs(const std::vector<std::vector<int>>& adj, int source) {
  std::vector<int> dist(adj.size(), -1);
  std::deque<int> queue{source};
  dist[source] = 0;
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    for (int v : adj[u]) {
      if (dist[v] < 0) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
    }
  }
  return dist;
}

inline std::vector<std::vector<int>> all_distances(int n, const Edges& edges) {
  const auto adj = adjacency_lists(n, edges);
  std::vector<std::vector<int>> d;
  for (int i = 0; i < n; ++i) d.push_back(bfs(adj, i));
  return d;
}

inline int diameter(const std::vector<std::vector<int>>& dist) {
  int best = 0;
  for (const auto& row : dist) best = std::max(best, *std::max_element(row.begin(), row.end()));
  return best;
}

/// I + 1[d(i, j) == k].
inline Eigen::MatrixXd k_hop(const std::vector<std::vector<int>>& dist, int k) {
  const auto n = static_cast<Eigen::Index>(dist.size());
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (k > 0 && dist[i][j] == k) m(i, j) = 1.0;
    }
  }
  return m;
}

/// Random spanning tree plus each remaining pair with probability `extra`.
inline Edges random_connected(int n, double extra, std::mt19937_64& rng) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::set<std::pair<int, int>> seen;
  Edges edges;
  auto add = [&](int a, int b) {
    if (a > b) std::swap(a, b);
    if (seen.insert({a, b}).second) edges.emplace_back(a, b);
  };
  for (int i = 1; i < n; ++i) {
    std::uniform_int_distribution<int> pick(0, i - 1);
    add(order[i], order[pick(rng)]);
  }
  std::bernoulli_distribution coin(extra);
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) {
      if (coin(rng)) add(a, b);
    }
  }
  return edges;
}

inline msg3d::graph::SkeletonTopology topology(int n, const Edges& edges, int center = 0) {
  std::vector<msg3d::graph::Edge> e;
  for (auto [a, b] : edges) e.push_back({a, b});
  return msg3d::graph::SkeletonTopology(n, e, center);
}

inline Edges edges_of(const msg3d::graph::SkeletonTopology& t) {
  Edges e;
  for (const auto& x : t.edges()) e.emplace_back(x.a, x.b);
  return e;
}

/// Triple-loop product, no BLAS.
inline Eigen::MatrixXd naive_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index k = 0; k < a.cols(); ++k) {
      for (Eigen::Index j = 0; j < b.cols(); ++j) c(i, j) += a(i, k) * b(k, j);
    }
  }
  return c;
}

inline Eigen::MatrixXd naive_power(const Eigen::MatrixXd& a, int k) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Identity(a.rows(), a.cols());
  for (int i = 0; i < k; ++i) out = naive_product(out, a);
  return out;
}

/// D^-1/2 M D^-1/2 from row sums, elementwise.
inline Eigen::MatrixXd sym_norm(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      out(i, j) = m(i, j) / std::sqrt(m.row(i).sum() * m.row(j).sum());
    }
  }
  return out;
}

/// Window graph of tau frames over a spatial graph: copies (t, u) and (s, v)
/// are adjacent whenever u == v or (u, v) is a spatial edge.
inline Edges window_edges(int n, const Edges& spatial, int tau) {
  Edges out;
  const auto adj = adjacency_lists(n, spatial);
  for (int t = 0; t < tau; ++t) {
    for (int s = 0; s < tau; ++s) {
      for (int u = 0; u < n; ++u) {
        const int a = t * n + u;
        auto link = [&](int v) {
          const int b = s * n + v;
          if (a < b) out.emplace_back(a, b);
        };
        link(u);
        for (int v : adj[u]) link(v);
      }
    }
  }
  return out;
}

}  // namespace oracle
