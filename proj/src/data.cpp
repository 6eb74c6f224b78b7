#include "msg3d/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace msg3d::data {

void SkeletonSequence::validate() const {
  if (frames == 0 || joints == 0 || channels == 0) {
    throw std::invalid_argument("sequence: extents must be positive");
  }
  if (values.size() != frames * joints * channels) {
    throw std::invalid_argument("sequence: value count does not match T*N*C");
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument("sequence: non-finite coordinate");
  }
}

SkeletonSequence pad_replay(const SkeletonSequence& seq, std::size_t target) {
  if (seq.frames == 0) throw std::invalid_argument("pad_replay: empty sequence");
  if (target == 0) throw std::invalid_argument("pad_replay: target length must be positive");
  SkeletonSequence out = seq;
  out.frames = target;
  const std::size_t frame = seq.joints * seq.channels;
  out.values.resize(target * frame);
  for (std::size_t t = 0; t < target; ++t) {
    const std::size_t src = t % seq.frames;
    std::copy_n(seq.values.begin() + static_cast<std::ptrdiff_t>(src * frame), frame,
                out.values.begin() + static_cast<std::ptrdiff_t>(t * frame));
  }
  return out;
}

SkeletonSequence translate_to_center(const SkeletonSequence& seq, int center) {
  if (center < 0 || static_cast<std::size_t>(center) >= seq.joints) {
    throw std::invalid_argument("translate: center joint out of range");
  }
  SkeletonSequence out = seq;
  std::vector<double> origin(seq.channels);
  for (std::size_t c = 0; c < seq.channels; ++c) origin[c] = seq.at(0, static_cast<std::size_t>(center), c);
  for (std::size_t t = 0; t < seq.frames; ++t) {
    for (std::size_t n = 0; n < seq.joints; ++n) {
      for (std::size_t c = 0; c < seq.channels; ++c) out.at(t, n, c) -= origin[c];
    }
  }
  return out;
}

ChannelScaler ChannelScaler::fit(std::span<const SkeletonSequence> train) {
  if (train.empty()) throw std::invalid_argument("scaler: no training sequences");
  const std::size_t channels = train.front().channels;
  std::vector<double> sum(channels, 0.0), sum_sq(channels, 0.0);
  std::size_t count = 0;
  for (const auto& s : train) {
    if (s.channels != channels) throw std::invalid_argument("scaler: channel counts differ");
    for (std::size_t i = 0; i < s.values.size(); ++i) sum[i % channels] += s.values[i];
    count += s.values.size() / channels;
  }
  for (std::size_t c = 0; c < channels; ++c) sum[c] /= static_cast<double>(count);
  for (const auto& s : train) {
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      const double d = s.values[i] - sum[i % channels];
      sum_sq[i % channels] += d * d;
    }
  }
  ChannelScaler scaler;
  for (std::size_t c = 0; c < channels; ++c) {
    const double sd = std::sqrt(sum_sq[c] / static_cast<double>(count));
    scaler.scale.push_back(sd > 0.0 ? 1.0 / sd : 1.0);
  }
  return scaler;
}

SkeletonSequence ChannelScaler::apply(const SkeletonSequence& seq) const {
  if (seq.channels != scale.size()) throw std::invalid_argument("scaler: channel count mismatch");
  SkeletonSequence out = seq;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] *= scale[i % seq.channels];
  return out;
}

DatasetSplit normalize_translate(const DatasetSplit& split, int center) {
  DatasetSplit out;
  out.seed = split.seed;
  for (const auto& s : split.train) out.train.push_back(translate_to_center(s, center));
  for (const auto& s : split.test) out.test.push_back(translate_to_center(s, center));
  const ChannelScaler scaler = ChannelScaler::fit(out.train);
  for (auto& s : out.train) s = scaler.apply(s);
  for (auto& s : out.test) s = scaler.apply(s);
  return out;
}

std::vector<int> parents_toward_center(const graph::SkeletonTopology& topology) {
  if (!topology.is_tree()) {
    throw std::invalid_argument("bones: topology '" + topology.name() + "' is not a tree");
  }
  const int n = topology.num_joints();
  std::vector<int> parent(static_cast<std::size_t>(n), -1);
  const int center = topology.center_joint();
  parent[static_cast<std::size_t>(center)] = center;
  std::vector<int> queue{center};
  for (std::size_t head = 0; head < queue.size(); ++head) {
    const int v = queue[head];
    for (int u : topology.neighbors()[static_cast<std::size_t>(v)]) {
      if (parent[static_cast<std::size_t>(u)] < 0) {
        parent[static_cast<std::size_t>(u)] = v;
        queue.push_back(u);
      }
    }
  }
  return parent;
}

SkeletonSequence derive_bones(const SkeletonSequence& seq, const graph::SkeletonTopology& topology) {
  if (seq.joints != static_cast<std::size_t>(topology.num_joints())) {
    throw std::invalid_argument("bones: sequence has " + std::to_string(seq.joints) +
                                " joints, topology has " + std::to_string(topology.num_joints()));
  }
  const auto parent = parents_toward_center(topology);
  SkeletonSequence out = seq;
  for (std::size_t t = 0; t < seq.frames; ++t) {
    for (std::size_t n = 0; n < seq.joints; ++n) {
      const auto p = static_cast<std::size_t>(parent[n]);
      for (std::size_t c = 0; c < seq.channels; ++c) out.at(t, n, c) = seq.at(t, n, c) - seq.at(t, p, c);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic actions

namespace {

// Rest pose, y up, metres. Left side at positive x.
constexpr std::array<std::array<double, 3>, 25> kRestPose{{
    {0.00, 0.00, 0.00},   {0.00, 0.30, 0.00},   {0.00, 0.65, 0.00},  {0.00, 0.80, 0.00},
    {0.18, 0.55, 0.00},   {0.25, 0.30, 0.00},   {0.28, 0.08, 0.00},  {0.29, 0.00, 0.00},
    {-0.18, 0.55, 0.00},  {-0.25, 0.30, 0.00},  {-0.28, 0.08, 0.00}, {-0.29, 0.00, 0.00},
    {0.10, -0.05, 0.00},  {0.12, -0.45, 0.00},  {0.12, -0.85, 0.00}, {0.12, -0.90, 0.10},
    {-0.10, -0.05, 0.00}, {-0.12, -0.45, 0.00}, {-0.12, -0.85, 0.00}, {-0.12, -0.90, 0.10},
    {0.00, 0.55, 0.00},   {0.30, -0.06, 0.00},  {0.26, 0.00, 0.03},  {-0.30, -0.06, 0.00},
    {-0.26, 0.00, 0.03},
}};

// Moving chains, ordered outward from the body.
const std::vector<int> kLeftArm{5, 6, 7, 22, 21};
const std::vector<int> kRightArm{9, 10, 11, 24, 23};
const std::vector<int> kLeftLeg{13, 14, 15};

struct Wave {
  const std::vector<int>* chain;
  double phase_offset;
};

std::vector<Wave> class_waves(int class_id) {
  switch (class_id) {
    case 0: return {{&kLeftArm, 0.0}};
    case 1: return {{&kRightArm, 0.0}};
    case 2: return {{&kLeftArm, 0.0}, {&kRightArm, std::numbers::pi}};
    case 3: return {{&kLeftLeg, 0.0}};
    default: throw std::invalid_argument("synth: class must be in 0..3");
  }
}

}  // namespace

SkeletonSequence synth_generate(int class_id, std::uint64_t seed,
                                const graph::SkeletonTopology& topology, std::size_t frames) {
  const auto waves = class_waves(class_id);
  if (topology.num_joints() != 25) {
    throw std::invalid_argument("synth: generator needs the 25-joint layout");
  }
  if (frames < 4) throw std::invalid_argument("synth: need at least 4 frames");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(class_id)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  std::normal_distribution<double> jitter(0.0, 0.01), noise(0.0, 0.02);

  const std::size_t min_frames = (3 * frames + 3) / 4;
  const std::size_t raw_frames =
      min_frames + static_cast<std::size_t>(unit(rng) * static_cast<double>(frames - min_frames + 1));
  const std::size_t t_raw = std::min(raw_frames, frames);
  const double body_scale = uniform(0.9, 1.1);
  const double cycles = uniform(1.5, 3.0);
  const double phase = uniform(0.0, 2.0 * std::numbers::pi);
  const double amplitude = uniform(0.12, 0.2);
  const double lag = uniform(0.3, 0.6);

  std::array<std::array<double, 3>, 25> pose{};
  for (std::size_t n = 0; n < 25; ++n) {
    for (std::size_t c = 0; c < 3; ++c) pose[n][c] = body_scale * (kRestPose[n][c] + jitter(rng));
  }

  SkeletonSequence out;
  out.frames = t_raw;
  out.joints = 25;
  out.channels = 3;
  out.label = class_id;
  out.values.resize(t_raw * 75);
  for (std::size_t t = 0; t < t_raw; ++t) {
    auto frame = pose;
    const double angle = 2.0 * std::numbers::pi * cycles * static_cast<double>(t) /
                             static_cast<double>(t_raw) + phase;
    for (const Wave& w : waves) {
      const auto& chain = *w.chain;
      for (std::size_t p = 0; p < chain.size(); ++p) {
        const double weight = static_cast<double>(p + 1) / static_cast<double>(chain.size());
        frame[static_cast<std::size_t>(chain[p])][2] +=
            amplitude * weight * std::sin(angle + w.phase_offset - lag * static_cast<double>(p));
      }
    }
    for (std::size_t n = 0; n < 25; ++n) {
      for (std::size_t c = 0; c < 3; ++c) out.at(t, n, c) = frame[n][c] + noise(rng);
    }
  }
  out.tag = "synth:" + std::to_string(seed);
  return pad_replay(out, frames);
}

DatasetSplit synth_split(std::size_t train_count, std::size_t test_count, std::uint64_t seed,
                         const graph::SkeletonTopology& topology, std::size_t frames) {
  DatasetSplit split;
  split.seed = seed;
  std::mt19937_64 rng(seed);
  auto fill = [&](std::vector<SkeletonSequence>& dst, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
      const int label = static_cast<int>(i % kSyntheticClasses);
      dst.push_back(synth_generate(label, rng(), topology, frames));
    }
  };
  fill(split.train, train_count);
  fill(split.test, test_count);
  return split;
}

ad::Tensor stack(std::span<const SkeletonSequence> sequences, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("stack: no sequences selected");
  const SkeletonSequence& first = sequences[indices.front()];
  const std::size_t frame_values = first.values.size();
  std::vector<double> values;
  values.reserve(indices.size() * frame_values);
  for (std::size_t i : indices) {
    const SkeletonSequence& s = sequences[i];
    if (s.frames != first.frames || s.joints != first.joints || s.channels != first.channels) {
      throw std::invalid_argument("stack: sequences differ in shape");
    }
    values.insert(values.end(), s.values.begin(), s.values.end());
  }
  return ad::Tensor({indices.size(), first.frames, first.joints, first.channels}, std::move(values));
}

std::vector<int> labels(std::span<const SkeletonSequence> sequences,
                        std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(sequences[i].label);
  return out;
}

// ---------------------------------------------------------------------------
// Text format

namespace {

class Cursor {
 public:
  explicit Cursor(std::string_view text) : text_(text) {}

  bool done() const { return pos_ >= text_.size(); }
  std::size_t pos() const { return pos_; }

  // Skips blank lines; returns false at end of input.
  bool skip_blank_lines() {
    while (!done()) {
      std::size_t p = pos_;
      while (p < text_.size() && (text_[p] == ' ' || text_[p] == '\t' || text_[p] == '\r')) ++p;
      if (p < text_.size() && text_[p] != '\n') return true;
      pos_ = p < text_.size() ? p + 1 : p;
    }
    return false;
  }

  std::string_view line(std::size_t& start) {
    start = pos_;
    const auto end = text_.find('\n', pos_);
    const std::size_t stop = end == std::string_view::npos ? text_.size() : end;
    pos_ = end == std::string_view::npos ? text_.size() : end + 1;
    std::string_view l = text_.substr(start, stop - start);
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    return l;
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
};

long header_field(std::string_view header, std::string_view key, std::size_t offset) {
  const std::string token = " " + std::string(key) + "=";
  const auto at = header.find(token);
  if (at == std::string_view::npos) throw ParseError("missing '" + std::string(key) + "=' in header", offset);
  const char* begin = header.data() + at + token.size();
  long v = 0;
  const auto [ptr, ec] = std::from_chars(begin, header.data() + header.size(), v);
  if (ec != std::errc() || (ptr != header.data() + header.size() && *ptr != ' ')) {
    throw ParseError("bad integer for '" + std::string(key) + "'", offset + at + token.size());
  }
  return v;
}

}  // namespace

std::vector<SkeletonSequence> parse_sequences(std::string_view text) {
  std::vector<SkeletonSequence> out;
  Cursor cur(text);
  while (cur.skip_blank_lines()) {
    std::size_t start = 0;
    const std::string_view header = cur.line(start);
    if (!header.starts_with("SEQ ")) throw ParseError("expected 'SEQ' header", start);
    const long label = header_field(header, "label", start);
    const long t = header_field(header, "T", start), n = header_field(header, "N", start),
               c = header_field(header, "C", start);
    if (t < 1 || n < 1 || c < 1) throw ParseError("T, N and C must be positive", start);
    SkeletonSequence seq;
    seq.label = static_cast<int>(label);
    seq.frames = static_cast<std::size_t>(t);
    seq.joints = static_cast<std::size_t>(n);
    seq.channels = static_cast<std::size_t>(c);
    seq.values.reserve(seq.frames * seq.joints * seq.channels);
    for (long row = 0; row < t * n; ++row) {
      if (cur.done()) throw ParseError("unexpected end of file inside a sequence", cur.pos());
      const std::string_view l = cur.line(start);
      const char* p = l.data();
      const char* end = l.data() + l.size();
      for (long k = 0; k < c; ++k) {
        while (p < end && (*p == ' ' || *p == '\t')) ++p;
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(p, end, v);
        if (ec != std::errc() || !std::isfinite(v)) {
          throw ParseError("expected a finite number", start + static_cast<std::size_t>(p - l.data()));
        }
        seq.values.push_back(v);
        p = ptr;
      }
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      if (p != end) {
        throw ParseError("too many values on a row", start + static_cast<std::size_t>(p - l.data()));
      }
    }
    out.push_back(std::move(seq));
  }
  return out;
}

void write_sequences(std::ostream& out, std::span<const SkeletonSequence> sequences) {
  char buf[64];
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const SkeletonSequence& seq = sequences[s];
    seq.validate();
    if (s) out << '\n';
    out << "SEQ label=" << seq.label << " T=" << seq.frames << " N=" << seq.joints
        << " C=" << seq.channels << '\n';
    for (std::size_t row = 0; row < seq.frames * seq.joints; ++row) {
      for (std::size_t c = 0; c < seq.channels; ++c) {
        const auto res = std::to_chars(buf, buf + sizeof(buf), seq.values[row * seq.channels + c]);
        if (c) out << ' ';
        out.write(buf, res.ptr - buf);
      }
      out << '\n';
    }
  }
}

std::vector<SkeletonSequence> load_sequences(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open sequence file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_sequences(buf.str());
}

void save_sequences(const std::filesystem::path& path, std::span<const SkeletonSequence> sequences) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write sequence file " + path.string());
  write_sequences(out, sequences);
}

// ---------------------------------------------------------------------------

std::vector<int> argmax_rows(const ad::Tensor& scores) {
  if (scores.rank() != 2 || scores.dim(1) == 0) throw std::invalid_argument("argmax: expects [B, classes]");
  const std::size_t b = scores.dim(0), c = scores.dim(1);
  const auto v = scores.values();
  std::vector<int> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    const auto row = v.subspan(i * c, c);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

std::vector<int> fuse_two_stream(const ad::Tensor& scores_joint, const ad::Tensor& scores_bone) {
  if (scores_joint.shape() != scores_bone.shape() || scores_joint.rank() != 2) {
    throw std::invalid_argument("fuse: score shapes " + ad::to_string(scores_joint.shape()) +
                                " and " + ad::to_string(scores_bone.shape()) + " differ");
  }
  std::vector<double> sum(scores_joint.numel());
  const auto a = scores_joint.values(), b = scores_bone.values();
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = a[i] + b[i];
  return argmax_rows(ad::Tensor(scores_joint.shape(), std::move(sum)));
}

}  // namespace msg3d::data
