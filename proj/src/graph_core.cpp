#include "msg3d/graph_core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>

namespace msg3d::graph {

namespace {

std::vector<std::vector<int>> neighbor_lists(int n, const std::vector<Edge>& edges) {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(n));
  for (const Edge& e : edges) {
    out[e.a].push_back(e.b);
    out[e.b].push_back(e.a);
  }
  for (auto& list : out) std::sort(list.begin(), list.end());
  return out;
}

std::vector<int> bfs_from(const std::vector<std::vector<int>>& neighbors, int source) {
  std::vector<int> dist(neighbors.size(), -1);
  std::queue<int> frontier;
  dist[source] = 0;
  frontier.push(source);
  while (!frontier.empty()) {
    const int u = frontier.front();
    frontier.pop();
    for (int v : neighbors[u]) {
      if (dist[v] < 0) {
        dist[v] = dist[u] + 1;
        frontier.push(v);
      }
    }
  }
  return dist;
}

Eigen::MatrixXd indicator(const Eigen::MatrixXd& m) {
  return (m.array() >= 1.0).cast<double>().matrix();
}

void require_k_adjacency_input(const AdjacencyMatrix& a_tilde) {
  if (!a_tilde.symmetric() || !a_tilde.is_binary()) {
    throw std::invalid_argument("k_adjacency: input must be binary and symmetric");
  }
  for (int i = 0; i < a_tilde.size(); ++i) {
    if (a_tilde(i, i) != 1.0) {
      throw std::invalid_argument("k_adjacency: input must carry self-loops");
    }
  }
}

// Ã_(k) for k = 0..max_scale via incremental boolean powers of Ã.
std::vector<AdjacencyMatrix> k_adjacency_family(const AdjacencyMatrix& a_tilde,
                                                int max_scale) {
  require_k_adjacency_input(a_tilde);
  if (max_scale < 0) throw std::invalid_argument("k_adjacency: negative scale");
  const int n = a_tilde.size();
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
  std::vector<AdjacencyMatrix> family;
  family.reserve(static_cast<std::size_t>(max_scale) + 1);
  family.emplace_back(eye);
  Eigen::MatrixXd reach_prev = eye;  // 1(Ã^0 >= 1)
  for (int k = 1; k <= max_scale; ++k) {
    Eigen::MatrixXd reach = indicator(reach_prev * a_tilde.values());
    family.emplace_back(eye + reach - reach_prev);
    reach_prev = std::move(reach);
  }
  return family;
}

}  // namespace

// ---------------------------------------------------------------------------
// SkeletonTopology

SkeletonTopology::SkeletonTopology(int num_joints, std::vector<Edge> edges,
                                   int center_joint, std::string name)
    : num_joints_(num_joints),
      edges_(std::move(edges)),
      center_joint_(center_joint),
      name_(std::move(name)) {
  if (num_joints_ <= 0) throw std::invalid_argument("topology: num_joints must be positive");
  if (center_joint_ < 0 || center_joint_ >= num_joints_) {
    throw std::invalid_argument("topology: center joint out of range");
  }
  std::set<std::pair<int, int>> seen;
  for (Edge& e : edges_) {
    if (e.a < 0 || e.a >= num_joints_ || e.b < 0 || e.b >= num_joints_) {
      throw std::invalid_argument("topology: edge index out of range");
    }
    if (e.a == e.b) throw std::invalid_argument("topology: self-edge in edge list");
    if (e.a > e.b) std::swap(e.a, e.b);
    if (!seen.insert({e.a, e.b}).second) {
      throw std::invalid_argument("topology: duplicate edge");
    }
  }
  neighbors_ = neighbor_lists(num_joints_, edges_);
  const auto dist = bfs_from(neighbors_, 0);
  if (std::any_of(dist.begin(), dist.end(), [](int d) { return d < 0; })) {
    throw std::invalid_argument("topology: graph is disconnected");
  }
}

SkeletonTopology SkeletonTopology::relabelled(const std::vector<int>& perm) const {
  if (static_cast<int>(perm.size()) != num_joints_) {
    throw std::invalid_argument("relabelled: permutation size mismatch");
  }
  std::vector<Edge> edges;
  edges.reserve(edges_.size());
  for (const Edge& e : edges_) edges.push_back({perm[e.a], perm[e.b]});
  return SkeletonTopology(num_joints_, std::move(edges), perm[center_joint_], name_);
}

SkeletonTopology ntu25() {
  // 0-based NTU RGB+D joint pairs.
  std::vector<Edge> edges = {
      {0, 1},   {1, 20},  {2, 20},  {2, 3},   {4, 20},  {4, 5},
      {5, 6},   {6, 7},   {8, 20},  {8, 9},   {9, 10},  {10, 11},
      {0, 12},  {12, 13}, {13, 14}, {14, 15}, {0, 16},  {16, 17},
      {17, 18}, {18, 19}, {21, 22}, {7, 22},  {23, 24}, {11, 24}};
  return SkeletonTopology(25, std::move(edges), 1, "ntu25");
}

SkeletonTopology kinetics18() {
  std::vector<Edge> edges = {
      {3, 4},  {2, 3},   {6, 7},   {5, 6},  {12, 13}, {11, 12},
      {9, 10}, {8, 9},   {5, 11},  {2, 8},  {1, 5},   {1, 2},
      {0, 1},  {0, 15},  {0, 14},  {15, 17}, {14, 16}};
  return SkeletonTopology(18, std::move(edges), 1, "kinetics18");
}

SkeletonTopology path_graph(int n) {
  std::vector<Edge> edges;
  for (int i = 0; i + 1 < n; ++i) edges.push_back({i, i + 1});
  return SkeletonTopology(n, std::move(edges), n / 2, "path" + std::to_string(n));
}

SkeletonTopology star_graph(int leaves) {
  std::vector<Edge> edges;
  for (int i = 1; i <= leaves; ++i) edges.push_back({0, i});
  return SkeletonTopology(leaves + 1, std::move(edges), 0, "star" + std::to_string(leaves));
}

SkeletonTopology read_topology(std::istream& in, std::string name) {
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& what) {
    throw std::runtime_error("topology line " + std::to_string(line_no) + ": " + what);
  };
  int n = -1;
  int center = -1;
  std::vector<Edge> edges;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    if (n < 0) {
      std::string n_tag, c_tag;
      if (!(fields >> n_tag >> n >> c_tag >> center) || n_tag != "N" || c_tag != "C") {
        fail("expected header 'N <num_joints> C <center_index>'");
      }
      continue;
    }
    int i = 0, j = 0;
    std::string extra;
    if (!(fields >> i >> j) || (fields >> extra)) fail("expected 'i j'");
    if (i >= j) fail("edge must satisfy i < j");
    edges.push_back({i, j});
  }
  if (n < 0) fail("missing header");
  try {
    return SkeletonTopology(n, std::move(edges), center, std::move(name));
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("invalid topology: ") + e.what());
  }
}

SkeletonTopology load_topology(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open topology file: " + path);
  return read_topology(in, path);
}

void write_topology(std::ostream& out, const SkeletonTopology& topology) {
  out << "N " << topology.num_joints() << " C " << topology.center_joint() << '\n';
  for (const Edge& e : topology.edges()) out << e.a << ' ' << e.b << '\n';
}

SkeletonTopology resolve_topology(const std::string& spec) {
  if (spec == "ntu25") return ntu25();
  if (spec == "kinetics18") return kinetics18();
  auto numeric_suffix = [&](const std::string& prefix) -> int {
    if (spec.rfind(prefix, 0) != 0 || spec.size() == prefix.size()) return -1;
    const std::string tail = spec.substr(prefix.size());
    if (!std::all_of(tail.begin(), tail.end(), ::isdigit)) return -1;
    return std::stoi(tail);
  };
  if (int n = numeric_suffix("path"); n > 0) return path_graph(n);
  if (int n = numeric_suffix("star"); n > 0) return star_graph(n);
  return load_topology(spec);
}

// ---------------------------------------------------------------------------
// AdjacencyMatrix

AdjacencyMatrix::AdjacencyMatrix(Eigen::MatrixXd values) : values_(std::move(values)) {
  if (values_.rows() != values_.cols()) {
    throw std::invalid_argument("adjacency matrix must be square");
  }
  if (!values_.allFinite()) throw std::invalid_argument("adjacency matrix has non-finite entries");
  symmetric_ = values_ == values_.transpose();
}

AdjacencyMatrix AdjacencyMatrix::identity(int n) {
  return AdjacencyMatrix(Eigen::MatrixXd::Identity(n, n));
}

bool AdjacencyMatrix::is_binary() const {
  return (values_.array() == 0.0 || values_.array() == 1.0).all();
}

std::size_t AdjacencyMatrix::nnz() const {
  return static_cast<std::size_t>((values_.array() != 0.0).count());
}

NormalizationMode parse_normalization_mode(const std::string& text) {
  if (text == "sym_self_loop") return NormalizationMode::SymSelfLoop;
  if (text == "random_walk") return NormalizationMode::RandomWalk;
  if (text == "sym_laplacian") return NormalizationMode::SymLaplacian;
  throw std::invalid_argument("unknown normalization mode: " + text);
}

std::string to_string(NormalizationMode mode) {
  switch (mode) {
    case NormalizationMode::SymSelfLoop: return "sym_self_loop";
    case NormalizationMode::RandomWalk: return "random_walk";
    case NormalizationMode::SymLaplacian: return "sym_laplacian";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Operations

AdjacencyMatrix build_adjacency(const SkeletonTopology& topology) {
  const int n = topology.num_joints();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (const Edge& e : topology.edges()) {
    a(e.a, e.b) = 1.0;
    a(e.b, e.a) = 1.0;
  }
  return AdjacencyMatrix(std::move(a));
}

AdjacencyMatrix add_self_loops(const AdjacencyMatrix& a) {
  if ((a.values().diagonal().array() != 0.0).any()) {
    throw std::invalid_argument("add_self_loops: diagonal already non-zero (double self-loop)");
  }
  Eigen::MatrixXd out = a.values();
  out.diagonal().setOnes();
  return AdjacencyMatrix(std::move(out));
}

AdjacencyMatrix k_adjacency(const AdjacencyMatrix& a_tilde, int k) {
  if (k < 0) throw std::invalid_argument("k_adjacency: k must be non-negative");
  return std::move(k_adjacency_family(a_tilde, k).back());
}

AdjacencyMatrix k_adjacency_bfs(const SkeletonTopology& topology, int k) {
  if (k < 0) throw std::invalid_argument("k_adjacency_bfs: k must be non-negative");
  const int n = topology.num_joints();
  Eigen::MatrixXd out = Eigen::MatrixXd::Identity(n, n);
  if (k == 0) return AdjacencyMatrix(std::move(out));
  for (int i = 0; i < n; ++i) {
    const auto dist = bfs_from(topology.neighbors(), i);
    for (int j = 0; j < n; ++j) {
      if (dist[j] == k) out(i, j) = 1.0;
    }
  }
  return AdjacencyMatrix(std::move(out));
}

std::vector<double> inverse_sqrt_degrees(const AdjacencyMatrix& m) {
  std::vector<double> out(static_cast<std::size_t>(m.size()));
  const Eigen::VectorXd deg = m.values().rowwise().sum();
  for (int i = 0; i < m.size(); ++i) {
    if (!(deg(i) > 0.0)) {
      throw std::invalid_argument("sym_normalize: zero row sum at node " + std::to_string(i));
    }
    out[i] = 1.0 / std::sqrt(deg(i));
  }
  return out;
}

namespace {

// (s_i * s_j) * m_ij keeps exact symmetry for symmetric m.
Eigen::MatrixXd scale_both_sides(const Eigen::MatrixXd& m, const Eigen::VectorXd& s) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) out(i, j) = (s(i) * s(j)) * m(i, j);
  }
  return out;
}

}  // namespace

AdjacencyMatrix sym_normalize(const AdjacencyMatrix& m) {
  const auto s = inverse_sqrt_degrees(m);
  const Eigen::Map<const Eigen::VectorXd> scale(s.data(), static_cast<Eigen::Index>(s.size()));
  return AdjacencyMatrix(scale_both_sides(m.values(), scale));
}

AdjacencyMatrix normalize(const AdjacencyMatrix& a, NormalizationMode mode) {
  const int n = a.size();
  switch (mode) {
    case NormalizationMode::SymSelfLoop:
      return sym_normalize(add_self_loops(a));
    case NormalizationMode::RandomWalk: {
      // Isolated nodes keep a zero row (0^-1 := 0).
      const Eigen::VectorXd deg = a.values().rowwise().sum();
      Eigen::VectorXd inv = deg.unaryExpr([](double d) { return d > 0.0 ? 1.0 / d : 0.0; });
      return AdjacencyMatrix(inv.asDiagonal() * a.values());
    }
    case NormalizationMode::SymLaplacian: {
      const Eigen::VectorXd deg = a.values().rowwise().sum();
      Eigen::VectorXd inv = deg.unaryExpr([](double d) { return d > 0.0 ? 1.0 / std::sqrt(d) : 0.0; });
      return AdjacencyMatrix(Eigen::MatrixXd::Identity(n, n) - scale_both_sides(a.values(), inv));
    }
  }
  throw std::invalid_argument("normalize: unknown mode");
}

AdjacencyMatrix powered_adjacency(const AdjacencyMatrix& a, int k, NormalizationMode mode) {
  if (k < 0) throw std::invalid_argument("powered_adjacency: k must be non-negative");
  const int n = a.size();
  if (k == 0) return AdjacencyMatrix::identity(n);
  const AdjacencyMatrix base = normalize(a, mode);
  Eigen::MatrixXd out = base.values();
  for (int i = 1; i < k; ++i) out = (out * base.values()).eval();
  return AdjacencyMatrix(std::move(out));
}

std::vector<std::vector<int>> hop_distances(const std::vector<std::vector<int>>& neighbors) {
  std::vector<std::vector<int>> out;
  out.reserve(neighbors.size());
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    out.push_back(bfs_from(neighbors, static_cast<int>(i)));
  }
  return out;
}

std::vector<std::vector<int>> hop_distances(const SkeletonTopology& topology) {
  return hop_distances(topology.neighbors());
}

std::vector<std::vector<int>> hop_distances(const AdjacencyMatrix& m) {
  std::vector<std::vector<int>> neighbors(static_cast<std::size_t>(m.size()));
  for (int i = 0; i < m.size(); ++i) {
    for (int j = 0; j < m.size(); ++j) {
      if (i != j && m(i, j) != 0.0) neighbors[i].push_back(j);
    }
  }
  return hop_distances(neighbors);
}

int graph_diameter(const SkeletonTopology& topology) {
  int diameter = 0;
  for (const auto& row : hop_distances(topology)) {
    for (int d : row) {
      if (d < 0) throw std::invalid_argument("graph_diameter: graph is disconnected");
      diameter = std::max(diameter, d);
    }
  }
  return diameter;
}

std::vector<DistanceWeight> weight_distance_profile(const AdjacencyMatrix& m,
                                                    const SkeletonTopology& topology,
                                                    int center) {
  const int n = topology.num_joints();
  if (m.size() != n) throw std::invalid_argument("weight_distance_profile: size mismatch");
  if (center < 0 || center >= n) throw std::invalid_argument("weight_distance_profile: bad center");
  const int diameter = graph_diameter(topology);
  const auto dist = bfs_from(topology.neighbors(), center);
  std::vector<double> sums(static_cast<std::size_t>(diameter) + 1, 0.0);
  std::vector<int> counts(sums.size(), 0);
  for (int j = 0; j < n; ++j) {
    sums[dist[j]] += m(center, j);
    counts[dist[j]] += 1;
  }
  std::vector<DistanceWeight> profile;
  profile.reserve(sums.size());
  for (std::size_t d = 0; d < sums.size(); ++d) {
    profile.push_back({static_cast<int>(d), counts[d] > 0 ? sums[d] / counts[d] : 0.0});
  }
  return profile;
}

// ---------------------------------------------------------------------------
// KAdjacencySet

KAdjacencySet::KAdjacencySet(const SkeletonTopology& topology, int max_scale)
    : KAdjacencySet(add_self_loops(build_adjacency(topology)), max_scale) {}

KAdjacencySet::KAdjacencySet(const AdjacencyMatrix& a_tilde, int max_scale)
    : raw_(k_adjacency_family(a_tilde, max_scale)) {
  normalized_.reserve(raw_.size());
  for (const auto& r : raw_) normalized_.push_back(sym_normalize(r));
}

void write_csv(std::ostream& out, const Eigen::MatrixXd& m) {
  const auto old_precision = out.precision(17);
  const auto old_flags = out.flags();
  out << std::defaultfloat;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out << ',';
      out << m(i, j);
    }
    out << '\n';
  }
  out.precision(old_precision);
  out.flags(old_flags);
}

}  // namespace msg3d::graph
