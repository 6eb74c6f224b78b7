#include "msg3d/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace msg3d::train {

namespace {

void copy_state(const std::vector<ad::NamedTensor>& from, std::vector<ad::NamedTensor>& to) {
  for (std::size_t i = 0; i < from.size(); ++i) {
    const auto v = from[i].tensor.values();
    std::copy(v.begin(), v.end(), to[i].tensor.values().begin());
  }
}

// One replica's forward/backward on a slice of the batch.
double replica_step(nn::MSG3DNet& net, std::vector<ad::Parameter>& params,
                    const std::vector<data::SkeletonSequence>& set,
                    std::span<const std::size_t> indices) {
  ad::zero_grads(params);
  const ad::Tensor x = data::stack(set, indices);
  const auto y = data::labels(set, indices);
  const ad::Tensor loss = ad::softmax_cross_entropy(net.forward(x, true), y);
  if (!std::isfinite(loss.item())) return loss.item();
  ad::backward(loss);
  return loss.item();
}

// Large activation buffers are freed and reallocated every step; keeping them
// on the heap instead of fresh mmaps avoids repeated page faults.
void tune_allocator() {
#ifdef __GLIBC__
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 32 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 256 << 20);
    return true;
  }();
  (void)once;
#endif
}

}  // namespace

double accuracy(const std::vector<int>& predictions, const std::vector<data::SkeletonSequence>& sequences) {
  if (predictions.size() != sequences.size()) throw std::invalid_argument("accuracy: size mismatch");
  if (sequences.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < sequences.size(); ++i) correct += predictions[i] == sequences[i].label;
  return static_cast<double>(correct) / static_cast<double>(sequences.size());
}

Evaluation evaluate(nn::MSG3DNet& net, const std::vector<data::SkeletonSequence>& sequences,
                    std::size_t batch_size) {
  ad::NoGradGuard no_grad;
  const auto classes = static_cast<std::size_t>(net.config().num_classes);
  std::vector<double> scores;
  scores.reserve(sequences.size() * classes);
  for (std::size_t start = 0; start < sequences.size(); start += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, sequences.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const ad::Tensor p = ad::softmax(net.forward(data::stack(sequences, idx), false));
    scores.insert(scores.end(), p.values().begin(), p.values().end());
  }
  Evaluation e;
  e.scores = ad::Tensor({sequences.size(), classes}, std::move(scores));
  e.predictions = sequences.empty() ? std::vector<int>{} : data::argmax_rows(e.scores);
  e.accuracy = accuracy(e.predictions, sequences);
  return e;
}

std::vector<EpochMetrics> train(nn::MSG3DNet& net, const std::vector<data::SkeletonSequence>& train_set,
                                const std::vector<data::SkeletonSequence>& test_set,
                                const TrainOptions& options) {
  if (options.batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
  if (options.workers < 1) throw std::invalid_argument("train: workers must be >= 1");
  if (options.epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  tune_allocator();
  const int classes = net.config().num_classes;
  for (const auto* set : {&train_set, &test_set}) {
    for (const auto& s : *set) {
      if (s.label < 0 || s.label >= classes) {
        throw std::invalid_argument("train: label " + std::to_string(s.label) + " outside 0.." +
                                    std::to_string(classes - 1));
      }
    }
  }
  if (train_set.empty() && options.epochs > 0) throw std::invalid_argument("train: empty training set");

  ad::OptimizerState state;
  state.base_lr = options.linear_lr_scaling ? ad::linear_scaled_lr(options.lr, options.batch_size)
                                            : options.lr;
  state.momentum = options.momentum;
  state.weight_decay = options.weight_decay;
  state.milestones = options.milestones;
  auto params = net.parameters();

  // Replicas for data-parallel batches; replica 0 is the model itself.
  std::vector<std::unique_ptr<nn::MSG3DNet>> extra;
  for (int w = 1; w < options.workers; ++w) extra.push_back(std::make_unique<nn::MSG3DNet>(net.config(), 0));
  std::vector<nn::MSG3DNet*> replicas{&net};
  for (auto& r : extra) replicas.push_back(r.get());
  std::vector<std::vector<ad::Parameter>> replica_params;
  std::vector<std::vector<ad::NamedTensor>> replica_state;
  for (auto* r : replicas) {
    replica_params.push_back(r->parameters());
    replica_state.push_back(r->state());
  }

  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<EpochMetrics> history;

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const double lr = ad::lr_schedule(state, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t count = std::min(options.batch_size, order.size() - start);
      const std::span<const std::size_t> batch(order.data() + start, count);
      double batch_loss = 0.0;
      if (replicas.size() == 1 || count < replicas.size()) {
        batch_loss = replica_step(net, params, train_set, batch);
      } else {
        for (std::size_t r = 1; r < replicas.size(); ++r) copy_state(replica_state[0], replica_state[r]);
        std::vector<double> losses(replicas.size());
        std::vector<std::span<const std::size_t>> slices;
        for (std::size_t r = 0; r < replicas.size(); ++r) {
          const std::size_t lo = count * r / replicas.size(), hi = count * (r + 1) / replicas.size();
          slices.push_back(batch.subspan(lo, hi - lo));
        }
        std::vector<std::thread> threads;
        for (std::size_t r = 1; r < replicas.size(); ++r) {
          threads.emplace_back([&, r] {
            losses[r] = replica_step(*replicas[r], replica_params[r], train_set, slices[r]);
          });
        }
        losses[0] = replica_step(net, params, train_set, slices[0]);
        for (auto& t : threads) t.join();
        // Weighted reduction in fixed parameter and replica order.
        for (std::size_t p = 0; p < params.size(); ++p) {
          auto g = params[p].tensor.grad();
          const double w0 = static_cast<double>(slices[0].size()) / static_cast<double>(count);
          for (double& v : g) v *= w0;
          for (std::size_t r = 1; r < replicas.size(); ++r) {
            const double w = static_cast<double>(slices[r].size()) / static_cast<double>(count);
            const auto gr = std::as_const(replica_params[r][p].tensor).grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += w * gr[i];
          }
        }
        // Running statistics: mean over replicas.
        for (std::size_t b = params.size(); b < replica_state[0].size(); ++b) {
          auto v = replica_state[0][b].tensor.values();
          for (std::size_t r = 1; r < replicas.size(); ++r) {
            const auto vr = std::as_const(replica_state[r][b].tensor).values();
            for (std::size_t i = 0; i < v.size(); ++i) v[i] += vr[i];
          }
          for (double& x : v) x /= static_cast<double>(replicas.size());
        }
        for (std::size_t r = 0; r < replicas.size(); ++r) {
          batch_loss += losses[r] * static_cast<double>(slices[r].size()) / static_cast<double>(count);
        }
      }
      if (!std::isfinite(batch_loss)) {
        throw NumericalError("training diverged: non-finite loss in epoch " + std::to_string(epoch + 1));
      }
      ad::sgd_step(state, params);
      loss_sum += batch_loss * static_cast<double>(count);
    }
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(order.size());
    m.test_accuracy = test_set.empty() ? 0.0 : evaluate(net, test_set).accuracy;
    history.push_back(m);
    if (options.on_epoch) options.on_epoch(m);
    if (options.target_accuracy && m.test_accuracy >= *options.target_accuracy) break;
  }
  return history;
}

}  // namespace msg3d::train
