#include "msg3d/spacetime_graph.hpp"

#include <stdexcept>
#include <vector>

namespace msg3d::graph {

void WindowSpec::validate() const {
  if (tau < 1 || tau % 2 == 0) {
    throw std::invalid_argument("window: tau must be odd and positive, got " + std::to_string(tau));
  }
  if (dilation < 1) throw std::invalid_argument("window: dilation must be >= 1");
  if (stride < 1) throw std::invalid_argument("window: stride must be >= 1");
}

Connectivity parse_connectivity(const std::string& text) {
  if (text == "cross_spacetime") return Connectivity::CrossSpacetime;
  if (text == "grid_like") return Connectivity::GridLike;
  if (text == "grid_like_dense_self") return Connectivity::GridLikeDenseSelf;
  throw std::invalid_argument("unknown connectivity variant '" + text + "'");
}

std::string to_string(Connectivity c) {
  switch (c) {
    case Connectivity::CrossSpacetime: return "cross_spacetime";
    case Connectivity::GridLike: return "grid_like";
    case Connectivity::GridLikeDenseSelf: return "grid_like_dense_self";
  }
  throw std::invalid_argument("invalid connectivity value");
}

SpacetimeAdjacency::SpacetimeAdjacency(AdjacencyMatrix raw, int tau, int base_nodes,
                                       Connectivity variant)
    : raw_(std::move(raw)), tau_(tau), base_nodes_(base_nodes), variant_(variant) {
  if (raw_.size() != tau * base_nodes) {
    throw std::invalid_argument("spacetime adjacency: size is not tau * N");
  }
}

const KAdjacencySet& SpacetimeAdjacency::k_family() const {
  if (!k_family_) throw std::logic_error("spacetime adjacency: k-family not built");
  return *k_family_;
}

namespace {

void require_self_looped(const AdjacencyMatrix& a) {
  if (!a.is_binary() || !a.symmetric()) {
    throw std::invalid_argument("window graph: A~ must be binary and symmetric");
  }
  for (int i = 0; i < a.size(); ++i) {
    if (a(i, i) != 1.0) throw std::invalid_argument("window graph: A~ needs self-loops");
  }
}

}  // namespace

SpacetimeAdjacency build_variant(const AdjacencyMatrix& a_tilde, int tau, Connectivity variant) {
  require_self_looped(a_tilde);
  if (tau < 1) throw std::invalid_argument("window graph: tau must be >= 1");
  const int n = a_tilde.size();
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(tau * n, tau * n);
  for (int bi = 0; bi < tau; ++bi) {
    for (int bj = 0; bj < tau; ++bj) {
      const bool diagonal = bi == bj;
      const Eigen::MatrixXd* block = nullptr;
      switch (variant) {
        case Connectivity::CrossSpacetime: block = &a_tilde.values(); break;
        case Connectivity::GridLike:
          if (diagonal) block = &a_tilde.values();
          else if (std::abs(bi - bj) == 1) block = &eye;
          break;
        case Connectivity::GridLikeDenseSelf: block = diagonal ? &a_tilde.values() : &eye; break;
      }
      if (block) m.block(bi * n, bj * n, n, n) = *block;
    }
  }
  return SpacetimeAdjacency(AdjacencyMatrix(std::move(m)), tau, n, variant);
}

SpacetimeAdjacency tile_block_adjacency(const AdjacencyMatrix& a_tilde, int tau) {
  return build_variant(a_tilde, tau, Connectivity::CrossSpacetime);
}

SpacetimeAdjacency st_k_adjacency(SpacetimeAdjacency st, int max_scale) {
  st.k_family_.emplace(st.raw_, max_scale);
  return st;
}

ad::Tensor extract_windows(const ad::Tensor& x, const WindowSpec& spec) {
  spec.validate();
  const bool batched = x.rank() == 4;
  if (x.rank() != 3 && !batched) {
    throw std::invalid_argument("extract_windows: expects [T,N,C] or [B,T,N,C], got " +
                                ad::to_string(x.shape()));
  }
  const std::size_t b = batched ? x.dim(0) : 1;
  const std::size_t t = x.dim(batched ? 1 : 0), n = x.dim(batched ? 2 : 1),
                    c = x.dim(batched ? 3 : 2);
  if (t < 1) throw std::invalid_argument("extract_windows: empty sequence");
  const std::size_t tau = static_cast<std::size_t>(spec.tau);
  const std::size_t t_out = (t + spec.stride - 1) / spec.stride;
  const std::size_t frame = n * c;

  // source[w * tau + j] is the input frame feeding slot j of window w, or -1
  std::vector<long> source(t_out * tau);
  const long half = (spec.tau - 1) / 2;
  for (std::size_t w = 0; w < t_out; ++w) {
    for (std::size_t j = 0; j < tau; ++j) {
      const long f = static_cast<long>(w) * spec.stride + spec.dilation * (static_cast<long>(j) - half);
      source[w * tau + j] = f >= 0 && f < static_cast<long>(t) ? f : -1;
    }
  }

  std::vector<double> out(b * t_out * tau * frame, 0.0);
  const auto xv = x.values();
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t s = 0; s < t_out * tau; ++s) {
      if (source[s] < 0) continue;
      const double* from = xv.data() + (i * t + static_cast<std::size_t>(source[s])) * frame;
      std::copy_n(from, frame, out.data() + (i * t_out * tau + s) * frame);
    }
  }
  ad::Shape shape = batched ? ad::Shape{b, t_out, tau * n, c} : ad::Shape{t_out, tau * n, c};
  return ad::make_result(std::move(shape), std::move(out), {x},
                         [x, source, b, t, t_out, tau, frame](std::span<const double> g) {
                           if (!x.requires_grad()) return;
                           auto acc = ad::grad_accumulator(x);
                           for (std::size_t i = 0; i < b; ++i) {
                             for (std::size_t s = 0; s < t_out * tau; ++s) {
                               if (source[s] < 0) continue;
                               double* to =
                                   acc.data() + (i * t + static_cast<std::size_t>(source[s])) * frame;
                               const double* from = g.data() + (i * t_out * tau + s) * frame;
                               for (std::size_t k = 0; k < frame; ++k) to[k] += from[k];
                             }
                           }
                         });
}

}  // namespace msg3d::graph
