#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "msg3d/autodiff/ops.hpp"
#include "msg3d/data.hpp"
#include "oracles.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace msg3d;
using namespace msg3d::data;

namespace {

SkeletonSequence counting(std::size_t t, std::size_t n, std::size_t c) {
  SkeletonSequence s;
  s.frames = t;
  s.joints = n;
  s.channels = c;
  for (std::size_t i = 0; i < t * n * c; ++i) s.values.push_back(static_cast<double>(i) * 0.5 - 3.0);
  return s;
}

SkeletonSequence random_sequence(std::size_t t, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.5);
  SkeletonSequence s;
  s.frames = t;
  s.joints = n;
  s.channels = 3;
  s.values.resize(t * n * 3);
  for (double& v : s.values) v = nd(rng);
  s.label = static_cast<int>(seed % 4);
  return s;
}

std::vector<double> frame(const SkeletonSequence& s, std::size_t t) {
  const std::size_t w = s.joints * s.channels;
  return {s.values.begin() + t * w, s.values.begin() + (t + 1) * w};
}

SkeletonSequence shifted(SkeletonSequence s, double dx, double dy, double dz) {
  for (std::size_t t = 0; t < s.frames; ++t)
    for (std::size_t n = 0; n < s.joints; ++n) {
      s.at(t, n, 0) += dx;
      s.at(t, n, 1) += dy;
      s.at(t, n, 2) += dz;
    }
  return s;
}

std::filesystem::path temp_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "msg3d_test_data";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("sequence validation") {
  auto s = counting(2, 3, 3);
  CHECK_NOTHROW(s.validate());
  s.values.pop_back();
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = counting(2, 3, 3);
  s.values[4] = std::nan("");
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  CHECK_THROWS_AS(SkeletonSequence{}.validate(), std::invalid_argument);
}

TEST_CASE("replay padding") {
  const auto ab = counting(2, 2, 3);
  const auto padded = pad_replay(ab, 5);
  REQUIRE(padded.frames == 5);
  for (std::size_t t = 0; t < 5; ++t) CHECK(frame(padded, t) == frame(ab, t % 2));

  const auto full = random_sequence(300, 2, 1);
  CHECK(pad_replay(full) == full);

  const auto longer = random_sequence(400, 2, 2);
  const auto cut = pad_replay(longer);
  REQUIRE(cut.frames == 300);
  for (std::size_t t = 0; t < 300; ++t) REQUIRE(frame(cut, t) == frame(longer, t));

  const auto odd = random_sequence(7, 3, 3);
  const auto tiled = pad_replay(odd, 23);
  for (std::size_t t = 0; t < 23; ++t) {
    bool found = false;
    for (std::size_t u = 0; u < 7 && !found; ++u) found = frame(tiled, t) == frame(odd, u);
    CHECK(found);
  }
  CHECK_THROWS_AS(pad_replay(SkeletonSequence{}, 5), std::invalid_argument);
  CHECK_THROWS_AS(pad_replay(ab, 0), std::invalid_argument);
}

TEST_CASE("translation to the center joint") {
  const auto s = random_sequence(6, 5, 4);
  const auto t = translate_to_center(s, 2);
  for (std::size_t c = 0; c < 3; ++c) CHECK(t.at(0, 2, c) == 0.0);
  CHECK(translate_to_center(t, 2) == t);
  const auto moved = translate_to_center(shifted(s, 1.25, -3.5, 0.75), 2);
  for (std::size_t i = 0; i < s.values.size(); ++i) CHECK(moved.values[i] == doctest::Approx(t.values[i]).epsilon(1e-14));
  CHECK_THROWS_AS(translate_to_center(s, 5), std::invalid_argument);
}

TEST_CASE("channel scaler uses training statistics") {
  std::vector<SkeletonSequence> train{random_sequence(10, 4, 5), random_sequence(12, 4, 6)};
  const auto scaler = ChannelScaler::fit(train);
  REQUIRE(scaler.scale.size() == 3);
  for (std::size_t c = 0; c < 3; ++c) {
    double n = 0, s1 = 0, s2 = 0;
    for (const auto& seq : train)
      for (std::size_t i = c; i < seq.values.size(); i += 3) {
        const double v = scaler.apply(seq).values[i];
        n += 1;
        s1 += v;
        s2 += v * v;
      }
    CHECK(s2 / n - (s1 / n) * (s1 / n) == doctest::Approx(1.0).epsilon(1e-10));
  }

  DatasetSplit split{train, {random_sequence(8, 4, 7)}, 0};
  DatasetSplit doubled = split;
  for (auto* part : {&doubled.train, &doubled.test})
    for (auto& seq : *part)
      for (double& v : seq.values) v *= 2.0;
  const auto a = normalize_translate(split, 1), b = normalize_translate(doubled, 1);
  for (std::size_t i = 0; i < a.test[0].values.size(); ++i)
    CHECK(b.test[0].values[i] == doctest::Approx(a.test[0].values[i]).epsilon(1e-12));
  CHECK_THROWS_AS(ChannelScaler::fit(std::span<const SkeletonSequence>{}), std::invalid_argument);
  CHECK_THROWS_AS(scaler.apply(counting(2, 2, 2)), std::invalid_argument);
}

TEST_CASE("bone vectors") {
  const graph::SkeletonTopology chain(2, {{0, 1}}, 0);
  SkeletonSequence s;
  s.frames = 1;
  s.joints = 2;
  s.channels = 3;
  s.values = {1.0, 2.0, 3.0, 1.5, 1.0, 7.0};
  const auto b = derive_bones(s, chain);
  CHECK(b.values == std::vector<double>{0.0, 0.0, 0.0, 0.5, -1.0, 4.0});

  const auto ntu = graph::ntu25();
  const auto parents = parents_toward_center(ntu);
  CHECK(parents[ntu.center_joint()] == ntu.center_joint());
  const auto dist = oracle::all_distances(25, oracle::edges_of(ntu));
  for (int n = 0; n < 25; ++n) {
    if (n == ntu.center_joint()) continue;
    CHECK(dist[ntu.center_joint()][parents[n]] == dist[ntu.center_joint()][n] - 1);
    CHECK(dist[n][parents[n]] == 1);
  }

  const auto seq = random_sequence(5, 25, 8);
  const auto bones = derive_bones(seq, ntu);
  CHECK(bones.frames == 5);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t c = 0; c < 3; ++c) CHECK(bones.at(t, ntu.center_joint(), c) == 0.0);
  const auto moved = derive_bones(translate_to_center(shifted(seq, 3.0, -2.0, 9.0), 0), ntu);
  for (std::size_t i = 0; i < bones.values.size(); ++i)
    CHECK(moved.values[i] == doctest::Approx(bones.values[i]).epsilon(1e-12));

  const graph::SkeletonTopology cycle(3, {{0, 1}, {1, 2}, {2, 0}}, 0);
  CHECK_THROWS_AS(derive_bones(counting(1, 3, 3), cycle), std::invalid_argument);
  CHECK_THROWS_AS(derive_bones(counting(1, 3, 3), chain), std::invalid_argument);
}

TEST_CASE("synthetic generator") {
  const auto ntu = graph::ntu25();
  const auto a = synth_generate(2, 99, ntu, 32);
  CHECK(a == synth_generate(2, 99, ntu, 32));
  CHECK_FALSE(a == synth_generate(2, 100, ntu, 32));
  CHECK(a.label == 2);
  CHECK(a.frames == 32);
  CHECK(a.joints == 25);
  CHECK_NOTHROW(a.validate());

  // Joints that move under class 0 but not class 3, and the other way round.
  auto motion = [&](const SkeletonSequence& s, std::size_t n) {
    double s1 = 0, s2 = 0;
    for (std::size_t t = 0; t < s.frames; ++t) {
      s1 += s.at(t, n, 2);
      s2 += s.at(t, n, 2) * s.at(t, n, 2);
    }
    const double m = s1 / static_cast<double>(s.frames);
    return std::sqrt(s2 / static_cast<double>(s.frames) - m * m);
  };
  const auto left_arm = synth_generate(0, 5, ntu, 64), leg = synth_generate(3, 5, ntu, 64);
  double arm_tip_0 = 0, arm_tip_3 = 0;
  for (std::size_t n : {7u, 21u, 22u}) {
    arm_tip_0 += motion(left_arm, n);
    arm_tip_3 += motion(leg, n);
  }
  CHECK(arm_tip_0 > 2.5 * arm_tip_3);
  CHECK(motion(leg, 14) > 2.5 * motion(left_arm, 14));

  CHECK_THROWS_AS(synth_generate(4, 1, ntu, 32), std::invalid_argument);
  CHECK_THROWS_AS(synth_generate(-1, 1, ntu, 32), std::invalid_argument);
  CHECK_THROWS_AS(synth_generate(0, 1, ntu, 3), std::invalid_argument);
  CHECK_THROWS_AS(synth_generate(0, 1, graph::kinetics18(), 32), std::invalid_argument);
}

TEST_CASE("synthetic split") {
  const auto ntu = graph::ntu25();
  const auto s = synth_split(12, 8, 3, ntu, 16);
  CHECK(s.train.size() == 12);
  CHECK(s.test.size() == 8);
  CHECK(s.seed == 3);
  std::array<int, 4> counts{};
  for (const auto& x : s.train) ++counts[x.label];
  CHECK(counts == std::array<int, 4>{3, 3, 3, 3});
  const auto again = synth_split(12, 8, 3, ntu, 16);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);
  for (const auto& x : s.train)
    for (const auto& y : s.test) CHECK_FALSE(x == y);
  CHECK_FALSE(synth_split(12, 8, 4, ntu, 16).train == s.train);
}

TEST_CASE("stack and labels") {
  std::vector<SkeletonSequence> seqs{counting(2, 2, 3), random_sequence(2, 2, 9), counting(3, 2, 3)};
  seqs[0].label = 1;
  seqs[1].label = 3;
  const std::vector<std::size_t> idx{1, 0};
  const auto x = stack(seqs, idx);
  REQUIRE(x.shape() == ad::Shape{2, 2, 2, 3});
  CHECK(std::equal(seqs[1].values.begin(), seqs[1].values.end(), x.values().begin()));
  CHECK(labels(seqs, idx) == std::vector<int>{3, 1});
  const std::vector<std::size_t> mixed{0, 2};
  CHECK_THROWS_AS(stack(seqs, mixed), std::invalid_argument);
  CHECK_THROWS_AS(stack(seqs, std::span<const std::size_t>{}), std::invalid_argument);
}

TEST_CASE("sequence file round trip") {
  std::vector<SkeletonSequence> seqs{random_sequence(4, 3, 10), random_sequence(2, 25, 11)};
  seqs[0].values[0] = 0.1 + 0.2;
  seqs[0].values[1] = -1e-310;
  seqs[1].values[2] = 1.0 / 3.0;
  const auto path = temp_file("round.seq");
  save_sequences(path, seqs);
  const auto back = load_sequences(path);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].label == seqs[i].label);
    CHECK(back[i].values == seqs[i].values);
  }

  std::ofstream(temp_file("empty.seq")).close();
  CHECK(load_sequences(temp_file("empty.seq")).empty());
  CHECK(parse_sequences("\n\n").empty());
  CHECK_THROWS_AS(load_sequences(temp_file("missing.seq")), std::runtime_error);
}

TEST_CASE("parse errors report byte offsets") {
  auto offset_of = [](std::string_view text) -> long {
    try {
      parse_sequences(text);
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("at byte " + std::to_string(e.offset())) != std::string::npos);
      return static_cast<long>(e.offset());
    }
    return -1;
  };
  const std::string good = "SEQ label=0 T=1 N=1 C=2\n1 2\n";
  CHECK(offset_of(good) == -1);
  CHECK(offset_of(good + "\nSEQ label=1 T=1 N=1 C=x\n1 2\n") >= static_cast<long>(good.size() + 1));
  CHECK(offset_of(good + "\nXEQ label=1 T=1 N=1 C=2\n1 2\n") == static_cast<long>(good.size() + 1));
  CHECK(offset_of("SEQ label=0 T=1 N=1\n1 2\n") == 0);
  CHECK(offset_of("SEQ label=0 T=0 N=1 C=2\n") == 0);
  CHECK(offset_of("SEQ label=0 T=1 N=1 C=2\n1 abc\n") == 26);
  CHECK(offset_of("SEQ label=0 T=1 N=1 C=2\n1 2 3\n") == 28);
  CHECK(offset_of("SEQ label=0 T=2 N=1 C=2\n1 2\n") >= 0);
  CHECK(offset_of("SEQ label=0 T=1 N=1 C=2\n1 nan\n") >= 0);
}

TEST_CASE("two-stream fusion") {
  const ad::Tensor joint({1, 2}, std::vector<double>{0.6, 0.4});
  const ad::Tensor bone({1, 2}, std::vector<double>{0.1, 0.9});
  CHECK(fuse_two_stream(joint, bone) == std::vector<int>{1});
  CHECK(argmax_rows(joint) == std::vector<int>{0});

  std::mt19937_64 rng(12);
  std::normal_distribution<double> nd;
  std::vector<double> lj(30), lb(30), lj_shift(30), lb_shift(30);
  for (std::size_t i = 0; i < 30; ++i) {
    lj[i] = nd(rng);
    lb[i] = nd(rng);
    lj_shift[i] = lj[i] + static_cast<double>(i / 3) * 7.0;
    lb_shift[i] = lb[i] - static_cast<double>(i / 3) * 2.5;
  }
  auto probs = [](std::vector<double> v) { return ad::softmax(ad::Tensor({10, 3}, std::move(v))); };
  const auto fused = fuse_two_stream(probs(lj), probs(lb));
  CHECK(fused == fuse_two_stream(probs(lj_shift), probs(lb_shift)));
  CHECK(fuse_two_stream(probs(lj), probs(lj)) == argmax_rows(probs(lj)));
  CHECK_THROWS_AS(fuse_two_stream(joint, ad::Tensor({2, 2})), std::invalid_argument);
  CHECK_THROWS_AS(argmax_rows(ad::Tensor({3})), std::invalid_argument);
}
