#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace msg3d::graph {

/// Undirected bone between two joints.
struct Edge {
  int a = 0;
  int b = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Connected skeleton graph: N joints, undirected bones and the body-center
/// joint used to orient bone vectors.
class SkeletonTopology {
 public:
  /// Validates indices, duplicates, self-edges and connectivity.
  /// @throws std::invalid_argument on any violation.
  SkeletonTopology(int num_joints, std::vector<Edge> edges, int center_joint,
                   std::string name = {});

  int num_joints() const { return num_joints_; }
  const std::vector<Edge>& edges() const { return edges_; }
  int center_joint() const { return center_joint_; }
  const std::string& name() const { return name_; }

  const std::vector<std::vector<int>>& neighbors() const { return neighbors_; }
  bool is_tree() const {
    return static_cast<int>(edges_.size()) == num_joints_ - 1;
  }

  /// Returns the same graph with joints relabelled: old joint v becomes
  /// perm[v].
  SkeletonTopology relabelled(const std::vector<int>& perm) const;

 private:
  int num_joints_;
  std::vector<Edge> edges_;
  int center_joint_;
  std::string name_;
  std::vector<std::vector<int>> neighbors_;
};

/// NTU RGB+D layout, 25 joints, 0-based indices, center joint 1.
SkeletonTopology ntu25();
/// OpenPose / Kinetics layout, 18 joints, center joint 1 (neck).
SkeletonTopology kinetics18();
SkeletonTopology path_graph(int n);
/// K_{1,leaves}; node 0 is the center.
SkeletonTopology star_graph(int leaves);

/// Reads `N <n> C <center>` followed by `i j` lines.
/// @throws std::runtime_error on malformed input.
SkeletonTopology read_topology(std::istream& in, std::string name = {});
SkeletonTopology load_topology(const std::string& path);
void write_topology(std::ostream& out, const SkeletonTopology& topology);

/// Accepts a preset name ("ntu25", "kinetics18", "path<N>") or a file path.
SkeletonTopology resolve_topology(const std::string& spec);

/// Dense square matrix tagged with exact symmetry. Values are always finite.
class AdjacencyMatrix {
 public:
  AdjacencyMatrix() = default;
  explicit AdjacencyMatrix(Eigen::MatrixXd values);

  static AdjacencyMatrix identity(int n);

  int size() const { return static_cast<int>(values_.rows()); }
  const Eigen::MatrixXd& values() const { return values_; }
  bool symmetric() const { return symmetric_; }
  double operator()(int i, int j) const { return values_(i, j); }

  bool is_binary() const;
  /// Number of non-zero entries.
  std::size_t nnz() const;

  friend bool operator==(const AdjacencyMatrix& x, const AdjacencyMatrix& y) {
    return x.values_.rows() == y.values_.rows() &&
           x.values_.cols() == y.values_.cols() && x.values_ == y.values_;
  }

 private:
  Eigen::MatrixXd values_;
  bool symmetric_ = true;
};

enum class NormalizationMode {
  SymSelfLoop,   // D~^-1/2 (A+I) D~^-1/2
  RandomWalk,    // D^-1 A
  SymLaplacian,  // I - D^-1/2 A D^-1/2
};

NormalizationMode parse_normalization_mode(const std::string& text);
std::string to_string(NormalizationMode mode);

/// Binary symmetric adjacency with zero diagonal.
AdjacencyMatrix build_adjacency(const SkeletonTopology& topology);

/// A + I. @throws std::invalid_argument if the diagonal is already non-zero.
AdjacencyMatrix add_self_loops(const AdjacencyMatrix& a);

/// Exact k-hop adjacency plus identity, computed as
/// I + 1(A~^k >= 1) - 1(A~^(k-1) >= 1) with boolean powering.
/// @throws std::invalid_argument unless a_tilde is binary, symmetric and has
///         a unit diagonal.
AdjacencyMatrix k_adjacency(const AdjacencyMatrix& a_tilde, int k);

/// Same contract as k_adjacency, computed by breadth-first search.
AdjacencyMatrix k_adjacency_bfs(const SkeletonTopology& topology, int k);

/// D^-1/2 M D^-1/2 with D the row sums of M.
/// @throws std::invalid_argument on a zero row sum.
AdjacencyMatrix sym_normalize(const AdjacencyMatrix& m);

/// Per-row D^-1/2 of M; the diagonal scaling used by sym_normalize.
std::vector<double> inverse_sqrt_degrees(const AdjacencyMatrix& m);

/// Normalised form of a raw (zero-diagonal) adjacency under `mode`.
AdjacencyMatrix normalize(const AdjacencyMatrix& a, NormalizationMode mode);

/// (normalize(a, mode))^k; the zeroth power is I.
AdjacencyMatrix powered_adjacency(const AdjacencyMatrix& a, int k,
                                  NormalizationMode mode);

/// All-pairs hop distances by BFS; -1 marks unreachable pairs.
std::vector<std::vector<int>> hop_distances(
    const std::vector<std::vector<int>>& neighbors);
std::vector<std::vector<int>> hop_distances(const SkeletonTopology& topology);
/// Hop distances on the graph whose edges are the non-zero off-diagonal
/// entries of `m`.
std::vector<std::vector<int>> hop_distances(const AdjacencyMatrix& m);

/// @throws std::invalid_argument if the graph is disconnected.
int graph_diameter(const SkeletonTopology& topology);

struct DistanceWeight {
  int distance = 0;
  double mean_weight = 0.0;
};

/// Mean of M[center][j] over the joints j at each hop distance
/// 0..diameter. Empty distance classes report 0.
std::vector<DistanceWeight> weight_distance_profile(
    const AdjacencyMatrix& m, const SkeletonTopology& topology, int center);

/// The family {A~_(k)} for k = 0..K with their normalised forms.
class KAdjacencySet {
 public:
  KAdjacencySet(const SkeletonTopology& topology, int max_scale);
  /// Builds the family from an arbitrary A~ (binary, symmetric, unit
  /// diagonal), e.g. a spatial-temporal window graph.
  KAdjacencySet(const AdjacencyMatrix& a_tilde, int max_scale);

  int max_scale() const { return static_cast<int>(raw_.size()) - 1; }
  int num_nodes() const { return raw_.front().size(); }
  const std::vector<AdjacencyMatrix>& raw() const { return raw_; }
  const std::vector<AdjacencyMatrix>& normalized() const { return normalized_; }

 private:
  std::vector<AdjacencyMatrix> raw_;
  std::vector<AdjacencyMatrix> normalized_;
};

/// Row-major CSV with 17 significant digits.
void write_csv(std::ostream& out, const Eigen::MatrixXd& m);

}  // namespace msg3d::graph
