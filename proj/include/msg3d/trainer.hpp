#pragma once

#include "msg3d/data.hpp"
#include "msg3d/layers.hpp"

#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

namespace msg3d::train {

/// Raised when the training loss stops being finite.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
};

struct TrainOptions {
  int epochs = 30;
  std::size_t batch_size = 32;
  double lr = 0.05;
  std::vector<int> milestones{30, 40};
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool linear_lr_scaling = false;  // lr * batch_size / 32
  std::uint64_t seed = 1;          // shuffling
  std::optional<double> target_accuracy;  // stop once reached
  int workers = 1;
  std::function<void(const EpochMetrics&)> on_epoch;
};

/// Mini-batch SGD on `train`, testing on `test` after every epoch.
/// With workers > 1 each batch is split over model replicas whose
/// gradients are reduced in parameter order; batch-norm statistics are then
/// per replica slice, so results depend on the worker count.
/// @throws NumericalError on a non-finite loss.
std::vector<EpochMetrics> train(nn::MSG3DNet& net, const std::vector<data::SkeletonSequence>& train,
                                const std::vector<data::SkeletonSequence>& test,
                                const TrainOptions& options);

struct Evaluation {
  ad::Tensor scores;  // softmax probabilities [B, classes]
  std::vector<int> predictions;
  double accuracy = 0.0;
};

/// Inference-mode scores over `sequences`.
Evaluation evaluate(nn::MSG3DNet& net, const std::vector<data::SkeletonSequence>& sequences,
                    std::size_t batch_size = 64);

double accuracy(const std::vector<int>& predictions, const std::vector<data::SkeletonSequence>& sequences);

}  // namespace msg3d::train
