#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "msg3d/autodiff/ops.hpp"
#include "msg3d/spacetime_graph.hpp"
#include "oracles.hpp"

#include <random>

using namespace msg3d;
using namespace msg3d::graph;

namespace {

AdjacencyMatrix a_tilde(const SkeletonTopology& t) { return add_self_loops(build_adjacency(t)); }

ad::Tensor random_tensor(ad::Shape shape, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = nd(rng);
  return ad::Tensor(std::move(shape), std::move(v), grad);
}

}  // namespace

TEST_CASE("window spec validation") {
  WindowSpec ok;
  CHECK_NOTHROW(ok.validate());
  CHECK_THROWS_AS((WindowSpec{4, 1, 1}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((WindowSpec{3, 0, 1}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((WindowSpec{3, 1, 0}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((WindowSpec{-1, 1, 1}.validate()), std::invalid_argument);
}

TEST_CASE("connectivity strings") {
  for (auto c : {Connectivity::CrossSpacetime, Connectivity::GridLike, Connectivity::GridLikeDenseSelf}) {
    CHECK(parse_connectivity(to_string(c)) == c);
  }
  CHECK_THROWS_AS(parse_connectivity("dense"), std::invalid_argument);
}

TEST_CASE("tau = 1 reproduces the spatial graph") {
  const auto at = a_tilde(ntu25());
  for (auto c : {Connectivity::CrossSpacetime, Connectivity::GridLike, Connectivity::GridLikeDenseSelf}) {
    const auto st = build_variant(at, 1, c);
    CHECK(st.raw() == at);
    CHECK(st.tau() == 1);
    CHECK(st.base_nodes() == 25);
  }
}

TEST_CASE("block structure of the variants") {
  const auto at = a_tilde(path_graph(3));
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(3, 3);
  const auto dense = tile_block_adjacency(at, 3);
  CHECK(dense.variant() == Connectivity::CrossSpacetime);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) CHECK(Eigen::MatrixXd(dense.raw().values().block(3 * i, 3 * j, 3, 3)) == at.values());
  }
  const auto grid = build_variant(at, 3, Connectivity::GridLike);
  CHECK(Eigen::MatrixXd(grid.raw().values().block(0, 3, 3, 3)) == eye);
  CHECK(Eigen::MatrixXd(grid.raw().values().block(0, 6, 3, 3)).isZero());
  CHECK(Eigen::MatrixXd(grid.raw().values().block(3, 3, 3, 3)) == at.values());
  const auto self = build_variant(at, 3, Connectivity::GridLikeDenseSelf);
  CHECK(Eigen::MatrixXd(self.raw().values().block(0, 6, 3, 3)) == eye);
  for (const auto* st : {&dense, &grid, &self}) {
    CHECK(st->raw().symmetric());
    CHECK(st->raw().is_binary());
    CHECK(st->raw().values().diagonal().isOnes());
  }
}

TEST_CASE("window graph preconditions") {
  const auto a = build_adjacency(path_graph(3));
  CHECK_THROWS_AS(tile_block_adjacency(a, 3), std::invalid_argument);
  CHECK_THROWS_AS(tile_block_adjacency(a_tilde(path_graph(3)), 0), std::invalid_argument);
  CHECK_THROWS_AS(SpacetimeAdjacency(a_tilde(path_graph(3)), 2, 3, Connectivity::CrossSpacetime),
                  std::invalid_argument);
}

TEST_CASE("window k-adjacency family") {
  const auto topo = ntu25();
  auto st = tile_block_adjacency(a_tilde(topo), 3);
  CHECK_FALSE(st.has_k_family());
  CHECK_THROWS_AS(st.k_family(), std::logic_error);
  st = st_k_adjacency(st, 4);
  REQUIRE(st.has_k_family());
  const auto& family = st.k_family();
  CHECK(family.max_scale() == 4);
  CHECK(family.num_nodes() == 75);
  const auto dist = oracle::all_distances(75, oracle::window_edges(25, oracle::edges_of(topo), 3));
  for (int k = 0; k <= 4; ++k) CHECK(family.raw()[k].values() == oracle::k_hop(dist, k));
}

TEST_CASE("cross-spacetime distances equal spatial distances") {
  const auto topo = kinetics18();
  const auto spatial = hop_distances(topo);
  const auto st = tile_block_adjacency(a_tilde(topo), 5);
  const auto d = hop_distances(st.raw());
  for (int t = 0; t < 5; ++t) {
    for (int s = 0; s < 5; ++s) {
      for (int u = 0; u < 18; ++u) {
        for (int v = 0; v < 18; ++v) {
          if (u != v) REQUIRE(d[t * 18 + u][s * 18 + v] == spatial[u][v]);
        }
      }
    }
  }
}

TEST_CASE("extract_windows gathers frames with zero padding") {
  std::vector<double> v(4 * 2 * 1);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i + 1);
  const ad::Tensor x({4, 2, 1}, v);
  const auto w = extract_windows(x, {3, 1, 1});
  REQUIRE(w.shape() == ad::Shape{4, 6, 1});
  const std::vector<double> first{0, 0, 1, 2, 3, 4};
  CHECK(std::vector<double>(w.values().begin(), w.values().begin() + 6) == first);
  const std::vector<double> last{5, 6, 7, 8, 0, 0};
  CHECK(std::vector<double>(w.values().end() - 6, w.values().end()) == last);

  const auto strided = extract_windows(x, {3, 2, 2});
  REQUIRE(strided.shape() == ad::Shape{2, 6, 1});
  const std::vector<double> centred_at_2{1, 2, 5, 6, 0, 0};
  CHECK(std::vector<double>(strided.values().begin() + 6, strided.values().end()) == centred_at_2);

  const auto one = extract_windows(x, {1, 1, 1});
  CHECK(one.shape() == ad::Shape{4, 2, 1});
  CHECK(std::equal(one.values().begin(), one.values().end(), v.begin()));
}

TEST_CASE("extract_windows batched and shape errors") {
  const auto x = random_tensor({2, 5, 3, 4}, 1);
  const auto w = extract_windows(x, {5, 1, 1});
  CHECK(w.shape() == ad::Shape{2, 5, 15, 4});
  CHECK_THROWS_AS(extract_windows(random_tensor({3, 4}, 2), {3, 1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(extract_windows(x, {2, 1, 1}), std::invalid_argument);
}

TEST_CASE("extract_windows is linear and its gradient is the adjoint") {
  const auto x = random_tensor({2, 6, 3, 2}, 3, true);
  const auto y = random_tensor({2, 6, 3, 2}, 4);
  const WindowSpec spec{3, 2, 1};
  const auto wx = extract_windows(x, spec), wy = extract_windows(y, spec);
  const auto wsum = extract_windows(ad::add(x.detach(), y), spec);
  for (std::size_t i = 0; i < wsum.numel(); ++i) {
    CHECK(wsum.values()[i] == doctest::Approx(wx.values()[i] + wy.values()[i]).epsilon(1e-15));
  }
  // <W x, r> = <x, W^T r>
  const auto r = random_tensor(wx.shape(), 5);
  ad::backward(ad::sum(ad::mul(wx, r)));
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < wx.numel(); ++i) lhs += wx.values()[i] * r.values()[i];
  for (std::size_t i = 0; i < x.numel(); ++i) rhs += x.values()[i] * x.grad()[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}
