#pragma once

#include "msg3d/autodiff/checkpoint.hpp"
#include "msg3d/autodiff/ops.hpp"
#include "msg3d/autodiff/optim.hpp"
#include "msg3d/graph_core.hpp"
#include "msg3d/spacetime_graph.hpp"

#include <optional>
#include <random>
#include <string>
#include <vector>

namespace msg3d::nn {

using ad::Tensor;
using Rng = std::mt19937_64;

/// Parameters and non-trainable state (BN running statistics) of a model,
/// each under a unique dotted name.
struct StateCollector {
  std::vector<ad::Parameter> parameters;
  std::vector<ad::NamedTensor> buffers;

  void add_parameter(const std::string& name, const Tensor& t, bool decay_exempt = false);
  void add_buffer(const std::string& name, const Tensor& t);
};

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) leaf tensor requiring a gradient.
Tensor fan_in_uniform(ad::Shape shape, std::size_t fan_in, Rng& rng);

class BatchNorm {
 public:
  explicit BatchNorm(std::size_t channels);
  Tensor forward(const Tensor& x, bool training);
  void collect(const std::string& prefix, StateCollector& out) const;

  Tensor gamma, beta;
  ad::BatchNormStats stats;
};

/// x[..., in] W[in, out] (+ b).
class Linear {
 public:
  Linear(std::size_t in, std::size_t out, bool bias, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, StateCollector& out) const;

  Tensor weight;
  std::optional<Tensor> bias;
};

enum class Aggregation { Disentangled, Powered };
Aggregation parse_aggregation(const std::string& text);
std::string to_string(Aggregation a);

/// Multi-scale graph convolution sum_k A_k X Theta_k on [..., N, C_in].
///
/// With masks, scale k uses A_k = base_k + diag(s_k) M_k diag(s_k). For
/// disentangled layers base_k is the normalised k-adjacency and s_k its
/// D^-1/2 from the unmasked matrix; for powered layers base_k is the k-th
/// power of the normalised adjacency and s_k = 1.
class MSGCNLayer {
 public:
  /// Single-scale layer on sym_normalize(A + I).
  static MSGCNLayer gcn(const graph::AdjacencyMatrix& a, std::size_t c_in, std::size_t c_out,
                        Rng& rng, bool activation = false);
  /// One scale per entry of the family (K + 1 scales).
  static MSGCNLayer disentangled(const graph::KAdjacencySet& family, std::size_t c_in,
                                 std::size_t c_out, bool masks, Rng& rng,
                                 bool activation = false);
  /// Scales 0..max_scale of normalize(a, mode)^k. `a` has a zero diagonal.
  static MSGCNLayer powered(const graph::AdjacencyMatrix& a, int max_scale,
                            graph::NormalizationMode mode, std::size_t c_in, std::size_t c_out,
                            bool masks, Rng& rng, bool activation = false);

  Tensor forward(const Tensor& x) const;
  /// Effective per-scale adjacencies (with masks applied).
  std::vector<Tensor> adjacencies() const;
  void collect(const std::string& prefix, StateCollector& out) const;

  std::size_t num_scales() const { return weights.size(); }
  std::size_t num_nodes() const { return bases.front().dim(0); }
  std::size_t in_channels() const { return weights.front().dim(0); }
  std::size_t out_channels() const { return weights.front().dim(1); }

  std::vector<Tensor> bases;                 // constant [N, N]
  std::vector<std::vector<double>> scaling;  // s_k
  std::vector<Tensor> weights;               // [C_in, C_out]
  std::vector<Tensor> masks;                 // [N, N], empty when disabled
  bool activation = false;

 private:
  MSGCNLayer() = default;
};

/// [..., tau*N, C_mid] (frame-major) -> [..., N, tau*C_mid] -> [..., N, C_out].
Tensor collapse_window(const Tensor& y, std::size_t tau, const Tensor& weight);

struct PathwaySpec {
  int tau = 3;
  int dilation = 1;
  bool operator==(const PathwaySpec&) const = default;
};

struct G3DOptions {
  int scales = 5;  // K_3d
  graph::Connectivity connectivity = graph::Connectivity::CrossSpacetime;
  Aggregation aggregation = Aggregation::Disentangled;
  graph::NormalizationMode normalization = graph::NormalizationMode::SymSelfLoop;
  bool masks = true;
};

/// Window extraction, multi-scale graph convolution on the tau*N window
/// graph (BN + ReLU), collapse readout to N joints, BN.
class MSG3DPathway {
 public:
  MSG3DPathway(const graph::AdjacencyMatrix& a, graph::WindowSpec window, std::size_t c_in,
               std::size_t c_mid, std::size_t c_out, const G3DOptions& options, Rng& rng);

  /// x[B, T, N, C_in] -> [B, ceil(T/stride), N, C_out].
  Tensor forward(const Tensor& x, bool training);
  /// The graph convolution alone on extracted windows [..., tau*N, C_in].
  Tensor graph_forward(const Tensor& windows) const { return gcn3d.forward(windows); }
  void collect(const std::string& prefix, StateCollector& out) const;

  graph::WindowSpec window;
  MSGCNLayer gcn3d;
  BatchNorm bn_mid;
  Tensor collapse;  // [tau*C_mid, C_out]
  BatchNorm bn_out;
};

struct TCNOptions {
  std::vector<int> dilations{1, 2, 3, 4};
  int stride = 1;
  bool activation = true;
};

/// Parallel bottleneck branches (1x1 conv, BN, ReLU, 3x1 dilated conv),
/// concatenated, plus a residual, then BN and optional ReLU.
class MSTCNLayer {
 public:
  MSTCNLayer(std::size_t c_in, std::size_t c_out, const TCNOptions& options, Rng& rng);

  /// x[B, T, N, C_in] -> [B, ceil(T/stride), N, C_out].
  Tensor forward(const Tensor& x, bool training);
  void collect(const std::string& prefix, StateCollector& out) const;

  struct Branch {
    Tensor bottleneck;  // [C_in, C_b]
    BatchNorm bn;
    Tensor conv;  // [3, C_b, C_b]
    int dilation;
  };
  std::vector<Branch> branches;
  std::optional<Tensor> residual;  // [1, C_in, C_out]; identity when absent
  BatchNorm bn;
  TCNOptions options;
};

struct BlockOptions {
  std::vector<PathwaySpec> pathways{{3, 1}, {5, 1}};
  bool factorized = true;
  bool double_at_collapse = true;
  int gcn_scales = 12;
  bool masks = true;
  Aggregation aggregation = Aggregation::Disentangled;
  graph::NormalizationMode normalization = graph::NormalizationMode::SymSelfLoop;
  G3DOptions g3d;
  std::vector<int> tcn_dilations{1, 2, 3, 4};
};

/// Sum of G3D pathways and the factorized pathway
/// (MS-GCN, BN, ReLU, MS-TCN, strided MS-TCN), then ReLU.
class STGCBlock {
 public:
  STGCBlock(const graph::SkeletonTopology& topology, std::size_t c_in, std::size_t c_out,
            int stride, const BlockOptions& options, Rng& rng);

  Tensor forward(const Tensor& x, bool training);
  /// The factorized pathway alone (before the block's final ReLU).
  Tensor factorized_forward(const Tensor& x, bool training);
  void collect(const std::string& prefix, StateCollector& out) const;

  std::vector<MSG3DPathway> pathways;
  std::optional<MSGCNLayer> gcn;
  std::optional<BatchNorm> gcn_bn;
  std::vector<MSTCNLayer> tcns;
};

/// Key-value description of an MS-G3D network.
struct NetworkConfig {
  std::string topology = "ntu25";
  int in_channels = 3;
  int num_classes = 60;
  std::vector<int> channels{96, 192, 384};
  int gcn_scales = 12;
  int g3d_scales = 5;
  std::vector<PathwaySpec> pathways{{3, 1}, {5, 1}};
  graph::Connectivity connectivity = graph::Connectivity::CrossSpacetime;
  bool masks = true;
  Aggregation aggregation = Aggregation::Disentangled;
  graph::NormalizationMode normalization = graph::NormalizationMode::SymSelfLoop;
  bool double_at_collapse = true;
  bool factorized_pathway = true;
  std::vector<int> tcn_dilations{1, 2, 3, 4};

  /// @throws std::invalid_argument on inconsistent values.
  void validate() const;
  bool operator==(const NetworkConfig&) const = default;
};

/// `key = value` lines applied over `base`; `#` starts a comment; unknown
/// keys are errors.
/// @throws std::invalid_argument with the offending line number.
NetworkConfig parse_network_config(const std::string& text, const NetworkConfig& base = {});
NetworkConfig load_network_config(const std::string& path);
/// Canonical text form; parse_network_config(serialize(c)) == c.
std::string serialize(const NetworkConfig& config);

class MSG3DNet {
  NetworkConfig config_;
  graph::SkeletonTopology topology_;

 public:
  MSG3DNet(const NetworkConfig& config, std::uint64_t seed);

  /// x[B, T, N, C_in] -> logits [B, num_classes].
  Tensor forward(const Tensor& x, bool training);
  /// Globally pooled features [B, channels.back()].
  Tensor features(const Tensor& x, bool training);

  const NetworkConfig& config() const { return config_; }
  const graph::SkeletonTopology& topology() const { return topology_; }
  std::vector<ad::Parameter> parameters() const;
  /// Parameters followed by buffers, for checkpoints.
  std::vector<ad::NamedTensor> state() const;

  std::vector<STGCBlock> blocks;
  Linear classifier;

 private:
  MSG3DNet(const NetworkConfig& config, Rng rng);
};

std::size_t count_parameters(const std::vector<ad::Parameter>& params);
std::size_t count_parameters(const MSG3DNet& net);

}  // namespace msg3d::nn
