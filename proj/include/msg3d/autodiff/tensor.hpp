#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace msg3d::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

using BackwardFn = std::function<void(std::span<const double> out_grad)>;

// One vertex of the recorded computation. Leaves have no backward function.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};

}  // namespace detail

/// Dense row-major array of doubles with an optional gradient.
///
/// Tensor is a handle: copies share storage and graph position, the way a
/// framework tensor does. Use detach() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  /// Zero-filled tensor.
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  /// Writable view. Mutating a tensor that already feeds a recorded graph
  /// invalidates that graph's gradients.
  std::span<double> values();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> grad();
  void zero_grad();

  /// Independent copy of the values, outside any graph.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>,
                            detail::BackwardFn);

  std::shared_ptr<detail::Node> node_;
};

/// Reverse sweep from a scalar. Leaf gradients accumulate across calls until
/// zero_grad(); intermediate gradients are released once propagated.
/// @throws std::invalid_argument if `loss` is not a scalar.
void backward(const Tensor& loss);

bool grad_enabled();

/// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds an op output. Records `backward` and `inputs` only when recording
/// is enabled and some input requires a gradient.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   detail::BackwardFn backward);

/// Gradient buffer of `t`, zero-allocated on first use. Intended for
/// backward functions accumulating into their inputs.
std::span<double> grad_accumulator(const Tensor& t);

}  // namespace msg3d::ad
