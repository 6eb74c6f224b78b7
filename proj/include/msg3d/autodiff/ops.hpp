#pragma once

#include "msg3d/autodiff/tensor.hpp"

#include <span>
#include <string_view>
#include <vector>

namespace msg3d::ad {

// Elementwise arithmetic on equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
/// out.shape[i] = a.shape[axes[i]].
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
/// Concatenation along the last axis; leading extents must agree.
Tensor concat_last(const std::vector<Tensor>& parts);

/// Multilinear contraction in index notation, e.g. "tij,tjc->tic".
///
/// Every index must occur in exactly two of the three terms (a contracted,
/// free or output index) or in all three (a batch index). Indices are
/// lower-case letters; no index repeats inside one term.
/// @throws std::invalid_argument on a malformed scheme or extent mismatch.
Tensor contract(const Tensor& a, const Tensor& b, std::string_view scheme);

/// x[..., K] times w[K, M] -> [..., M].
Tensor matmul(const Tensor& x, const Tensor& w);
/// x[..., C] + bias[C].
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor relu(const Tensor& x);

/// Row softmax over the last axis.
Tensor softmax(const Tensor& logits);
/// Mean negative log-likelihood of `labels` under softmax(logits[B, classes]).
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Mean over every axis between the first and the last: [B, ..., C] -> [B, C].
Tensor mean_pool(const Tensor& x);

/// Running statistics of a batch-normalisation layer.
struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.9;  // running <- momentum * running + (1 - momentum) * batch
  double eps = 1e-5;

  explicit BatchNormStats(std::size_t channels);
};

/// Normalises over all axes except the last (channel) axis. Training mode
/// uses batch moments and updates `stats`; evaluation mode uses `stats`.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormStats& stats, bool training);

struct TemporalConvSpec {
  int kernel = 3;  // odd
  int stride = 1;
  int dilation = 1;
};

/// Convolution along axis 1 of x[B, T, N, C_in] with w[kernel, C_in, C_out],
/// shared across joints. Centred taps, zero padding, output length
/// ceil(T / stride) with output frame t' centred at input frame t' * stride.
Tensor temporal_conv(const Tensor& x, const Tensor& w, const TemporalConvSpec& spec);

/// sum_k A_k X W_k applied to every [N, C_in] slice of x[..., N, C_in].
/// adjacencies[k] is [N, N], weights[k] is [C_in, C_out].
Tensor graph_conv(const Tensor& x, const std::vector<Tensor>& adjacencies,
                  const std::vector<Tensor>& weights);

/// base + diag(s) * mask * diag(s); base is treated as a constant.
Tensor scaled_mask_adjacency(const Tensor& base, std::span<const double> s,
                             const Tensor& mask);

}  // namespace msg3d::ad
