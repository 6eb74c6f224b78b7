#pragma once

#include "msg3d/autodiff/tensor.hpp"
#include "msg3d/graph_core.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace msg3d::data {

/// T x N x C joint features, frame-major then joint-major.
struct SkeletonSequence {
  std::size_t frames = 0;
  std::size_t joints = 0;
  std::size_t channels = 0;
  std::vector<double> values;
  int label = 0;
  std::string tag;

  double& at(std::size_t t, std::size_t n, std::size_t c) {
    return values[(t * joints + n) * channels + c];
  }
  double at(std::size_t t, std::size_t n, std::size_t c) const {
    return values[(t * joints + n) * channels + c];
  }
  /// @throws std::invalid_argument on empty or inconsistent extents or
  ///         non-finite values.
  void validate() const;
  bool operator==(const SkeletonSequence&) const = default;
};

struct DatasetSplit {
  std::vector<SkeletonSequence> train;
  std::vector<SkeletonSequence> test;
  std::uint64_t seed = 0;
};

/// Tiles frames cyclically up to `target` frames; longer inputs keep their
/// first `target` frames.
SkeletonSequence pad_replay(const SkeletonSequence& seq, std::size_t target = 300);

/// Subtracts the position of `center` in the first frame from every joint.
SkeletonSequence translate_to_center(const SkeletonSequence& seq, int center);

/// Per-channel scale fitted on training data: x_c <- x_c / std_c.
struct ChannelScaler {
  std::vector<double> scale;

  static ChannelScaler fit(std::span<const SkeletonSequence> train);
  SkeletonSequence apply(const SkeletonSequence& seq) const;
};

/// Translation, then the per-channel scale fitted on `split.train` only.
DatasetSplit normalize_translate(const DatasetSplit& split, int center);

/// Bone n = joint n minus its parent on the path to the center joint; the
/// center's bone is zero. Output has the input's shape.
/// @throws std::invalid_argument if the topology is not a tree or the joint
///         counts disagree.
SkeletonSequence derive_bones(const SkeletonSequence& seq, const graph::SkeletonTopology& topology);

/// Parent of every joint on its path to the center (center maps to itself).
std::vector<int> parents_toward_center(const graph::SkeletonTopology& topology);

constexpr int kSyntheticClasses = 4;

/// Deterministic synthetic action on the 25-joint NTU layout: class 0 waves
/// the left arm, 1 the right arm, 2 both arms in anti-phase, 3 the left leg.
/// Motion is a zero-mean travelling sine along the depth axis with random
/// frequency and phase, plus N(0, 0.02^2) noise. Raw length is drawn from
/// [3T/4, T] and replay-padded to T.
/// @throws std::invalid_argument on a bad class, T < 4, or a topology other
///         than 25 joints.
SkeletonSequence synth_generate(int class_id, std::uint64_t seed,
                                const graph::SkeletonTopology& topology, std::size_t frames);

/// Class-balanced synthetic train/test split; deterministic in `seed`.
DatasetSplit synth_split(std::size_t train_count, std::size_t test_count, std::uint64_t seed,
                         const graph::SkeletonTopology& topology, std::size_t frames);

/// Stacks sequences[indices] into [B, T, N, C]. All must share a shape.
ad::Tensor stack(std::span<const SkeletonSequence> sequences, std::span<const std::size_t> indices);
std::vector<int> labels(std::span<const SkeletonSequence> sequences,
                        std::span<const std::size_t> indices);

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& message, std::size_t offset)
      : std::runtime_error(message + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// Text format, one block per sequence separated by a blank line:
//   SEQ label=<int> T=<int> N=<int> C=<int>
//   T*N lines of C space-separated values (frame-major, joint-minor)
std::vector<SkeletonSequence> parse_sequences(std::string_view text);
void write_sequences(std::ostream& out, std::span<const SkeletonSequence> sequences);
/// @throws ParseError on malformed content, std::runtime_error on I/O.
std::vector<SkeletonSequence> load_sequences(const std::filesystem::path& path);
void save_sequences(const std::filesystem::path& path, std::span<const SkeletonSequence> sequences);

/// argmax over classes of scores_joint + scores_bone, both [B, classes].
/// @throws std::invalid_argument on shape mismatch.
std::vector<int> fuse_two_stream(const ad::Tensor& scores_joint, const ad::Tensor& scores_bone);

/// Row-wise argmax of [B, classes].
std::vector<int> argmax_rows(const ad::Tensor& scores);

}  // namespace msg3d::data
