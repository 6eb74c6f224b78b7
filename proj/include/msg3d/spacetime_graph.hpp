#pragma once

#include "msg3d/autodiff/tensor.hpp"
#include "msg3d/graph_core.hpp"

#include <optional>
#include <string>

namespace msg3d::graph {

/// Sliding temporal window: tau frames (odd), every `dilation` frames,
/// centres advancing by `stride`.
struct WindowSpec {
  int tau = 3;
  int dilation = 1;
  int stride = 1;

  /// @throws std::invalid_argument on even tau or non-positive fields.
  void validate() const;
  bool operator==(const WindowSpec&) const = default;
};

enum class Connectivity { CrossSpacetime, GridLike, GridLikeDenseSelf };

/// "cross_spacetime", "grid_like" or "grid_like_dense_self".
/// @throws std::invalid_argument on anything else.
Connectivity parse_connectivity(const std::string& text);
std::string to_string(Connectivity c);

/// The tau*N-node window graph. Node (frame j, joint v) has index j*N + v.
class SpacetimeAdjacency {
 public:
  SpacetimeAdjacency(AdjacencyMatrix raw, int tau, int base_nodes, Connectivity variant);

  const AdjacencyMatrix& raw() const { return raw_; }
  int tau() const { return tau_; }
  int base_nodes() const { return base_nodes_; }
  Connectivity variant() const { return variant_; }

  bool has_k_family() const { return k_family_.has_value(); }
  /// @throws std::logic_error before st_k_adjacency populated it.
  const KAdjacencySet& k_family() const;

 private:
  friend SpacetimeAdjacency st_k_adjacency(SpacetimeAdjacency st, int max_scale);

  AdjacencyMatrix raw_;
  int tau_;
  int base_nodes_;
  Connectivity variant_;
  std::optional<KAdjacencySet> k_family_;
};

/// Every N x N block equals A~.
/// @throws std::invalid_argument unless a_tilde is binary and symmetric with
///         a unit diagonal, or if tau < 1.
SpacetimeAdjacency tile_block_adjacency(const AdjacencyMatrix& a_tilde, int tau);

/// GridLike: A~ on the block diagonal, I on the first off-diagonals.
/// GridLikeDenseSelf: A~ on the block diagonal, I in every other block.
SpacetimeAdjacency build_variant(const AdjacencyMatrix& a_tilde, int tau, Connectivity variant);

/// Populates the exact-k-hop family of the window graph for k = 0..max_scale.
SpacetimeAdjacency st_k_adjacency(SpacetimeAdjacency st, int max_scale);

/// Gathers sliding windows: x[T, N, C] -> [T', tau*N, C], or batched
/// x[B, T, N, C] -> [B, T', tau*N, C]. Window t is centred at frame
/// t*stride and reads frames t*stride + d*(j - (tau-1)/2); frames outside
/// [0, T) contribute zeros. T' = ceil(T / stride). Differentiable.
ad::Tensor extract_windows(const ad::Tensor& x, const WindowSpec& spec);

}  // namespace msg3d::graph
