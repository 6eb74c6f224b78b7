#include "msg3d/autodiff/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace msg3d::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using Index = Eigen::Index;

ConstMatMap as_matrix(std::span<const double> v, std::size_t rows, std::size_t cols) {
  return ConstMatMap(v.data(), static_cast<Index>(rows), static_cast<Index>(cols));
}
MatMap as_matrix(std::span<double> v, std::size_t rows, std::size_t cols) {
  return MatMap(v.data(), static_cast<Index>(rows), static_cast<Index>(cols));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                                " vs " + to_string(b.shape()));
  }
}

void accumulate(const Tensor& t, std::span<const double> g, double factor = 1.0) {
  if (!t.requires_grad()) return;
  auto acc = grad_accumulator(t);
  for (std::size_t i = 0; i < g.size(); ++i) acc[i] += factor * g[i];
}

std::vector<double> permute_values(const Shape& shape, std::span<const double> values,
                                   const std::vector<std::size_t>& axes, Shape* out_shape) {
  const std::size_t rank = shape.size();
  if (axes.size() != rank) throw std::invalid_argument("permute: axes size mismatch");
  std::vector<bool> seen(rank, false);
  for (std::size_t a : axes) {
    if (a >= rank || seen[a]) throw std::invalid_argument("permute: invalid axes");
    seen[a] = true;
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * shape[i];
  Shape new_shape(rank);
  std::vector<std::size_t> strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    new_shape[i] = shape[axes[i]];
    strides[i] = in_strides[axes[i]];
  }
  std::vector<double> out(values.size());
  if (rank == 0) {
    std::copy(values.begin(), values.end(), out.begin());
  } else if (!out.empty()) {
    std::vector<std::size_t> counter(rank, 0);
    std::size_t src = 0;
    const std::size_t inner = rank ? new_shape[rank - 1] : 1;
    const std::size_t inner_stride = rank ? strides[rank - 1] : 1;
    for (std::size_t dst = 0; dst < out.size(); dst += inner) {
      for (std::size_t i = 0; i < inner; ++i) out[dst + i] = values[src + i * inner_stride];
      // advance the multi-index over all but the innermost axis
      for (std::size_t ax = rank - 1; ax-- > 0;) {
        src += strides[ax];
        if (++counter[ax] < new_shape[ax]) break;
        src -= strides[ax] * new_shape[ax];
        counter[ax] = 0;
      }
    }
  }
  if (out_shape) *out_shape = std::move(new_shape);
  return out;
}

// ---------------------------------------------------------------------------
// Contraction scheme handling

struct Scheme {
  std::string a, b, out;
};

Scheme parse_scheme(std::string_view text) {
  const auto arrow = text.find("->");
  const auto comma = text.find(',');
  if (arrow == std::string_view::npos || comma == std::string_view::npos || comma > arrow) {
    throw std::invalid_argument("contract: scheme must look like 'ab,bc->ac'");
  }
  Scheme s{std::string(text.substr(0, comma)),
           std::string(text.substr(comma + 1, arrow - comma - 1)),
           std::string(text.substr(arrow + 2))};
  for (const std::string* term : {&s.a, &s.b, &s.out}) {
    std::array<bool, 26> used{};
    for (char c : *term) {
      if (c < 'a' || c > 'z') throw std::invalid_argument("contract: indices must be a-z");
      if (used[c - 'a']) throw std::invalid_argument("contract: repeated index in a term");
      used[c - 'a'] = true;
    }
  }
  for (char c = 'a'; c <= 'z'; ++c) {
    const int count = (s.a.find(c) != std::string::npos) + (s.b.find(c) != std::string::npos) +
                      (s.out.find(c) != std::string::npos);
    if (count == 1) {
      throw std::invalid_argument(std::string("contract: index '") + c +
                                  "' must appear in at least two terms");
    }
  }
  return s;
}

std::vector<double> contract_values(const Shape& sa, std::span<const double> a,
                                    const Shape& sb, std::span<const double> b,
                                    const Scheme& s, Shape* out_shape) {
  if (sa.size() != s.a.size() || sb.size() != s.b.size()) {
    throw std::invalid_argument("contract: operand rank does not match scheme");
  }
  std::array<std::size_t, 26> extent{};
  std::array<bool, 26> known{};
  auto bind = [&](const std::string& term, const Shape& shape) {
    for (std::size_t i = 0; i < term.size(); ++i) {
      const int c = term[i] - 'a';
      if (known[c] && extent[c] != shape[i]) {
        throw std::invalid_argument(std::string("contract: extent mismatch for index '") +
                                    term[i] + "'");
      }
      known[c] = true;
      extent[c] = shape[i];
    }
  };
  bind(s.a, sa);
  bind(s.b, sb);

  auto in = [](const std::string& term, char c) { return term.find(c) != std::string::npos; };
  std::string batch, free_a, free_b, summed;
  for (char c : s.out) {
    if (in(s.a, c) && in(s.b, c)) batch += c;
    else if (in(s.a, c)) free_a += c;
    else free_b += c;
  }
  for (char c : s.a) {
    if (in(s.b, c) && !in(s.out, c)) summed += c;
  }
  auto axes_of = [](const std::string& term, const std::string& order) {
    std::vector<std::size_t> axes;
    for (char c : order) axes.push_back(term.find(c));
    return axes;
  };
  auto product = [&](const std::string& letters) {
    std::size_t p = 1;
    for (char c : letters) p *= extent[c - 'a'];
    return p;
  };
  const std::size_t nb = product(batch), m = product(free_a), n = product(free_b),
                    k = product(summed);

  const auto pa = permute_values(sa, a, axes_of(s.a, batch + free_a + summed), nullptr);
  const auto pb = permute_values(sb, b, axes_of(s.b, batch + summed + free_b), nullptr);
  std::vector<double> r(nb * m * n, 0.0);
  for (std::size_t i = 0; i < nb; ++i) {
    auto ri = as_matrix(std::span<double>(r).subspan(i * m * n, m * n), m, n);
    ri.noalias() = as_matrix(std::span<const double>(pa).subspan(i * m * k, m * k), m, k) *
                   as_matrix(std::span<const double>(pb).subspan(i * k * n, k * n), k, n);
  }
  const std::string r_order = batch + free_a + free_b;
  Shape r_shape;
  for (char c : r_order) r_shape.push_back(extent[c - 'a']);
  return permute_values(r_shape, r, axes_of(r_order, s.out), out_shape);
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    accumulate(a, g);
    accumulate(b, g);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    accumulate(a, g);
    accumulate(b, g, -1.0);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    if (a.requires_grad()) {
      auto ga = grad_accumulator(a);
      const auto bv = b.values();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (b.requires_grad()) {
      auto gb = grad_accumulator(b);
      const auto av = a.values();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= factor;
  return make_result(a.shape(), std::move(out), {a},
                     [a, factor](std::span<const double> g) { accumulate(a, g, factor); });
}

Tensor sum(const Tensor& a) {
  const auto v = a.values();
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  return make_result(Shape{}, {total}, {a}, [a](std::span<const double> g) {
    if (!a.requires_grad()) return;
    for (double& x : grad_accumulator(a)) x += g[0];
  });
}

Tensor mean(const Tensor& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

// ---------------------------------------------------------------------------
// Layout

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw std::invalid_argument("reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_result(std::move(shape), std::move(out), {a},
                     [a](std::span<const double> g) { accumulate(a, g); });
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  Shape out_shape;
  auto out = permute_values(a.shape(), a.values(), axes, &out_shape);
  std::vector<std::size_t> inverse(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) inverse[axes[i]] = i;
  Shape permuted = out_shape;
  return make_result(std::move(out_shape), std::move(out), {a},
                     [a, inverse, permuted](std::span<const double> g) {
                       if (!a.requires_grad()) return;
                       accumulate(a, permute_values(permuted, g, inverse, nullptr));
                     });
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_last: no inputs");
  const Shape& first = parts.front().shape();
  if (first.empty()) throw std::invalid_argument("concat_last: scalars cannot be concatenated");
  const std::size_t rows = parts.front().numel() / first.back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin(), s.end() - 1, first.begin())) {
      throw std::invalid_argument("concat_last: leading extents differ");
    }
    widths.push_back(s.back());
    total += s.back();
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto v = parts[p].values();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.data() + r * widths[p], widths[p], out.data() + r * total + offset);
    }
    offset += widths[p];
  }
  Shape shape = first;
  shape.back() = total;
  return make_result(std::move(shape), std::move(out), parts,
                     [parts, widths, rows, total](std::span<const double> g) {
                       std::size_t off = 0;
                       for (std::size_t p = 0; p < parts.size(); ++p) {
                         if (parts[p].requires_grad()) {
                           auto acc = grad_accumulator(parts[p]);
                           for (std::size_t r = 0; r < rows; ++r) {
                             for (std::size_t c = 0; c < widths[p]; ++c) {
                               acc[r * widths[p] + c] += g[r * total + off + c];
                             }
                           }
                         }
                         off += widths[p];
                       }
                     });
}

// ---------------------------------------------------------------------------
// Products

Tensor contract(const Tensor& a, const Tensor& b, std::string_view scheme) {
  const Scheme s = parse_scheme(scheme);
  Shape out_shape;
  auto out = contract_values(a.shape(), a.values(), b.shape(), b.values(), s, &out_shape);
  Shape shape_copy = out_shape;
  return make_result(
      std::move(out_shape), std::move(out), {a, b},
      [a, b, s, shape_copy](std::span<const double> g) {
        if (a.requires_grad()) {
          accumulate(a, contract_values(shape_copy, g, b.shape(), b.values(),
                                        Scheme{s.out, s.b, s.a}, nullptr));
        }
        if (b.requires_grad()) {
          accumulate(b, contract_values(a.shape(), a.values(), shape_copy, g,
                                        Scheme{s.a, s.out, s.b}, nullptr));
        }
      });
}

Tensor matmul(const Tensor& x, const Tensor& w) {
  if (x.rank() < 1 || w.rank() != 2 || x.shape().back() != w.dim(0)) {
    throw std::invalid_argument("matmul: cannot multiply " + to_string(x.shape()) + " by " +
                                to_string(w.shape()));
  }
  const std::size_t k = w.dim(0), m = w.dim(1), rows = x.numel() / k;
  std::vector<double> out(rows * m);
  as_matrix(std::span<double>(out), rows, m).noalias() =
      as_matrix(x.values(), rows, k) * as_matrix(w.values(), k, m);
  Shape shape = x.shape();
  shape.back() = m;
  return make_result(std::move(shape), std::move(out), {x, w},
                     [x, w, rows, k, m](std::span<const double> g) {
                       const auto gm = as_matrix(g, rows, m);
                       if (x.requires_grad()) {
                         as_matrix(grad_accumulator(x), rows, k).noalias() +=
                             gm * as_matrix(w.values(), k, m).transpose();
                       }
                       if (w.requires_grad()) {
                         as_matrix(grad_accumulator(w), k, m).noalias() +=
                             as_matrix(x.values(), rows, k).transpose() * gm;
                       }
                     });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.rank() < 1 || x.shape().back() != bias.dim(0)) {
    throw std::invalid_argument("add_bias: bias does not match the last axis");
  }
  const std::size_t c = bias.dim(0), rows = x.numel() / c;
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] += bv[j];
  }
  return make_result(x.shape(), std::move(out), {x, bias},
                     [x, bias, rows, c](std::span<const double> g) {
                       accumulate(x, g);
                       if (bias.requires_grad()) {
                         auto gb = grad_accumulator(bias);
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Activations and loss

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return make_result(x.shape(), std::move(out), {x}, [x](std::span<const double> g) {
    if (!x.requires_grad()) return;
    auto acc = grad_accumulator(x);
    const auto xv = x.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) acc[i] += g[i];
    }
  });
}

namespace {
std::vector<double> softmax_rows(std::span<const double> x, std::size_t rows, std::size_t cols) {
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * cols;
    double* o = out.data() + r * cols;
    const double peak = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += (o[c] = std::exp(in[c] - peak));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  return out;
}
}  // namespace

Tensor softmax(const Tensor& logits) {
  if (logits.rank() < 1) throw std::invalid_argument("softmax: needs at least one axis");
  const std::size_t cols = logits.shape().back(), rows = logits.numel() / cols;
  auto out = softmax_rows(logits.values(), rows, cols);
  std::vector<double> probs = out;
  return make_result(logits.shape(), std::move(out), {logits},
                     [logits, probs, rows, cols](std::span<const double> g) {
                       if (!logits.requires_grad()) return;
                       auto acc = grad_accumulator(logits);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double dot = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) {
                           dot += g[r * cols + c] * probs[r * cols + c];
                         }
                         for (std::size_t c = 0; c < cols; ++c) {
                           acc[r * cols + c] += probs[r * cols + c] * (g[r * cols + c] - dot);
                         }
                       }
                     });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw std::invalid_argument("softmax_cross_entropy: expects logits [B, classes] and B labels");
  }
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= cols) {
      throw std::invalid_argument("softmax_cross_entropy: label out of range");
    }
  }
  auto probs = softmax_rows(logits.values(), rows, cols);
  double loss = 0.0;
  const auto lv = logits.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = lv.data() + r * cols;
    const double peak = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(in[c] - peak);
    loss += peak + std::log(total) - in[labels[r]];
  }
  loss /= static_cast<double>(rows);
  std::vector<int> label_copy(labels.begin(), labels.end());
  return make_result(Shape{}, {loss}, {logits},
                     [logits, probs, label_copy, rows, cols](std::span<const double> g) {
                       if (!logits.requires_grad()) return;
                       auto acc = grad_accumulator(logits);
                       const double s = g[0] / static_cast<double>(rows);
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t c = 0; c < cols; ++c) {
                           const double onehot = static_cast<int>(c) == label_copy[r] ? 1.0 : 0.0;
                           acc[r * cols + c] += s * (probs[r * cols + c] - onehot);
                         }
                       }
                     });
}

Tensor mean_pool(const Tensor& x) {
  if (x.rank() < 2) throw std::invalid_argument("mean_pool: expects [B, ..., C]");
  const std::size_t b = x.dim(0), c = x.shape().back();
  const std::size_t middle = x.numel() / (b * c);
  std::vector<double> out(b * c, 0.0);
  const auto xv = x.values();
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t m = 0; m < middle; ++m) {
      const double* row = xv.data() + (i * middle + m) * c;
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] += row[j];
    }
  }
  const double inv = 1.0 / static_cast<double>(middle);
  for (double& v : out) v *= inv;
  return make_result(Shape{b, c}, std::move(out), {x},
                     [x, b, c, middle, inv](std::span<const double> g) {
                       if (!x.requires_grad()) return;
                       auto acc = grad_accumulator(x);
                       for (std::size_t i = 0; i < b; ++i) {
                         for (std::size_t m = 0; m < middle; ++m) {
                           double* row = acc.data() + (i * middle + m) * c;
                           for (std::size_t j = 0; j < c; ++j) row[j] += g[i * c + j] * inv;
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Batch normalisation

BatchNormStats::BatchNormStats(std::size_t channels)
    : running_mean(Shape{channels}), running_var(Tensor::filled(Shape{channels}, 1.0)) {}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormStats& stats, bool training) {
  if (x.rank() < 1) throw std::invalid_argument("batch_norm: needs a channel axis");
  const std::size_t c = x.shape().back(), rows = x.numel() / c;
  if (gamma.numel() != c || beta.numel() != c || stats.running_mean.numel() != c) {
    throw std::invalid_argument("batch_norm: channel count mismatch");
  }
  const auto xv = x.values();
  std::vector<double> mu(c, 0.0), inv_std(c, 0.0);
  if (training) {
    std::vector<double> var(c, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < c; ++j) mu[j] += xv[r * c + j];
    }
    for (double& m : mu) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < c; ++j) {
        const double d = xv[r * c + j] - mu[j];
        var[j] += d * d;
      }
    }
    auto rm = stats.running_mean.values();
    auto rv = stats.running_var.values();
    for (std::size_t j = 0; j < c; ++j) {
      var[j] /= static_cast<double>(rows);
      inv_std[j] = 1.0 / std::sqrt(var[j] + stats.eps);
      rm[j] = stats.momentum * rm[j] + (1.0 - stats.momentum) * mu[j];
      rv[j] = stats.momentum * rv[j] + (1.0 - stats.momentum) * var[j];
    }
  } else {
    const auto rm = stats.running_mean.values();
    const auto rv = stats.running_var.values();
    for (std::size_t j = 0; j < c; ++j) {
      mu[j] = rm[j];
      inv_std[j] = 1.0 / std::sqrt(rv[j] + stats.eps);
    }
  }
  std::vector<double> xhat(xv.size()), out(xv.size());
  const auto gv = gamma.values(), bv = beta.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t i = r * c + j;
      xhat[i] = (xv[i] - mu[j]) * inv_std[j];
      out[i] = gv[j] * xhat[i] + bv[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std, rows, c,
       training](std::span<const double> g) {
        if (gamma.requires_grad() || beta.requires_grad()) {
          std::vector<double> dg(c, 0.0), db(c, 0.0);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < c; ++j) {
              dg[j] += g[r * c + j] * xhat[r * c + j];
              db[j] += g[r * c + j];
            }
          }
          accumulate(gamma, dg);
          accumulate(beta, db);
        }
        if (!x.requires_grad()) return;
        auto acc = grad_accumulator(x);
        const auto gv = gamma.values();
        if (!training) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < c; ++j) acc[r * c + j] += g[r * c + j] * gv[j] * inv_std[j];
          }
          return;
        }
        // dx = inv_std / M * (M dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
        std::vector<double> sum_d(c, 0.0), sum_dx(c, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) {
            const double d = g[r * c + j] * gv[j];
            sum_d[j] += d;
            sum_dx[j] += d * xhat[r * c + j];
          }
        }
        const double m = static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) {
            const std::size_t i = r * c + j;
            const double d = g[i] * gv[j];
            acc[i] += inv_std[j] / m * (m * d - sum_d[j] - xhat[i] * sum_dx[j]);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Temporal convolution

namespace {

struct ConvGeometry {
  std::size_t batch, frames, out_frames, joints, cin, cout, kernel;
  int stride, dilation;

  long source_frame(std::size_t t_out, std::size_t tap) const {
    const long half = static_cast<long>(kernel - 1) / 2;
    return static_cast<long>(t_out) * stride + dilation * (static_cast<long>(tap) - half);
  }
};

// Row (b, t', n) of the unfolded input holds the kernel taps side by side.
std::vector<double> unfold(std::span<const double> x, const ConvGeometry& g) {
  const std::size_t width = g.kernel * g.cin;
  std::vector<double> col(g.batch * g.out_frames * g.joints * width, 0.0);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t t = 0; t < g.out_frames; ++t) {
      for (std::size_t j = 0; j < g.kernel; ++j) {
        const long src = g.source_frame(t, j);
        if (src < 0 || src >= static_cast<long>(g.frames)) continue;
        for (std::size_t n = 0; n < g.joints; ++n) {
          const double* from = x.data() + ((b * g.frames + src) * g.joints + n) * g.cin;
          double* to = col.data() + ((b * g.out_frames + t) * g.joints + n) * width + j * g.cin;
          std::copy_n(from, g.cin, to);
        }
      }
    }
  }
  return col;
}

void fold_add(std::span<const double> col, std::span<double> x, const ConvGeometry& g) {
  const std::size_t width = g.kernel * g.cin;
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t t = 0; t < g.out_frames; ++t) {
      for (std::size_t j = 0; j < g.kernel; ++j) {
        const long src = g.source_frame(t, j);
        if (src < 0 || src >= static_cast<long>(g.frames)) continue;
        for (std::size_t n = 0; n < g.joints; ++n) {
          double* to = x.data() + ((b * g.frames + src) * g.joints + n) * g.cin;
          const double* from =
              col.data() + ((b * g.out_frames + t) * g.joints + n) * width + j * g.cin;
          for (std::size_t c = 0; c < g.cin; ++c) to[c] += from[c];
        }
      }
    }
  }
}


// Stride 1: one GEMM per (batch, tap) over the overlapping frame range.
template <typename Fn>
void for_each_tap(const ConvGeometry& g, Fn&& fn) {
  const long frames = static_cast<long>(g.frames);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t j = 0; j < g.kernel; ++j) {
      const long offset = g.source_frame(0, j);
      const long lo = std::max(0L, -offset), hi = std::min(frames, frames - offset);
      if (hi <= lo) continue;
      const std::size_t out_row = (b * g.frames + static_cast<std::size_t>(lo)) * g.joints;
      const std::size_t in_row = (b * g.frames + static_cast<std::size_t>(lo + offset)) * g.joints;
      fn(j, out_row, in_row, static_cast<std::size_t>(hi - lo) * g.joints);
    }
  }
}

Tensor shifted_conv(const Tensor& x, const Tensor& w, const ConvGeometry& g) {
  std::vector<double> out(g.batch * g.frames * g.joints * g.cout, 0.0);
  const auto xv = x.values();
  const auto wv = w.values();
  for_each_tap(g, [&](std::size_t j, std::size_t out_row, std::size_t in_row, std::size_t n) {
    as_matrix(std::span<double>(out).subspan(out_row * g.cout, n * g.cout), n, g.cout).noalias() +=
        as_matrix(xv.subspan(in_row * g.cin, n * g.cin), n, g.cin) *
        as_matrix(wv.subspan(j * g.cin * g.cout, g.cin * g.cout), g.cin, g.cout);
  });
  return make_result(
      Shape{g.batch, g.frames, g.joints, g.cout}, std::move(out), {x, w},
      [x, w, g](std::span<const double> grad) {
        const auto xv = x.values();
        const auto wv = w.values();
        const bool need_w = w.requires_grad(), need_x = x.requires_grad();
        std::span<double> dw, dx;
        if (need_w) dw = grad_accumulator(w);
        if (need_x) dx = grad_accumulator(x);
        for_each_tap(g, [&](std::size_t j, std::size_t out_row, std::size_t in_row, std::size_t n) {
          const auto gm = as_matrix(grad.subspan(out_row * g.cout, n * g.cout), n, g.cout);
          const std::size_t wsz = g.cin * g.cout;
          if (need_w) {
            as_matrix(dw.subspan(j * wsz, wsz), g.cin, g.cout).noalias() +=
                as_matrix(xv.subspan(in_row * g.cin, n * g.cin), n, g.cin).transpose() * gm;
          }
          if (need_x) {
            as_matrix(dx.subspan(in_row * g.cin, n * g.cin), n, g.cin).noalias() +=
                gm * as_matrix(wv.subspan(j * wsz, wsz), g.cin, g.cout).transpose();
          }
        });
      });
}

}  // namespace

Tensor temporal_conv(const Tensor& x, const Tensor& w, const TemporalConvSpec& spec) {
  if (x.rank() != 4 || w.rank() != 3 || w.dim(1) != x.dim(3) ||
      w.dim(0) != static_cast<std::size_t>(spec.kernel)) {
    throw std::invalid_argument("temporal_conv: expects x[B,T,N,Cin] and w[k,Cin,Cout], got " +
                                to_string(x.shape()) + " and " + to_string(w.shape()));
  }
  if (spec.kernel < 1 || spec.kernel % 2 == 0 || spec.stride < 1 || spec.dilation < 1) {
    throw std::invalid_argument("temporal_conv: kernel must be odd, stride/dilation >= 1");
  }
  ConvGeometry g{x.dim(0), x.dim(1), 0, x.dim(2), x.dim(3), w.dim(2),
                 static_cast<std::size_t>(spec.kernel), spec.stride, spec.dilation};
  g.out_frames = (g.frames + spec.stride - 1) / spec.stride;
  if (spec.stride == 1) return shifted_conv(x, w, g);
  const std::size_t rows = g.batch * g.out_frames * g.joints, width = g.kernel * g.cin;
  const auto col = unfold(x.values(), g);
  std::vector<double> out(rows * g.cout);
  as_matrix(std::span<double>(out), rows, g.cout).noalias() =
      as_matrix(std::span<const double>(col), rows, width) * as_matrix(w.values(), width, g.cout);
  return make_result(
      Shape{g.batch, g.out_frames, g.joints, g.cout}, std::move(out), {x, w},
      [x, w, g, rows, width](std::span<const double> grad) {
        const auto gm = as_matrix(grad, rows, g.cout);
        if (w.requires_grad()) {
          const auto col = unfold(x.values(), g);
          as_matrix(grad_accumulator(w), width, g.cout).noalias() +=
              as_matrix(std::span<const double>(col), rows, width).transpose() * gm;
        }
        if (x.requires_grad()) {
          std::vector<double> dcol(rows * width);
          as_matrix(std::span<double>(dcol), rows, width).noalias() =
              gm * as_matrix(w.values(), width, g.cout).transpose();
          fold_add(dcol, grad_accumulator(x), g);
        }
      });
}

// ---------------------------------------------------------------------------
// Multi-adjacency graph convolution

namespace {

// [S, N, C] <-> [N, S, C]
}  // namespace

Tensor graph_conv(const Tensor& x, const std::vector<Tensor>& adjacencies,
                  const std::vector<Tensor>& weights) {
  if (adjacencies.empty() || adjacencies.size() != weights.size()) {
    throw std::invalid_argument("graph_conv: need one weight per adjacency");
  }
  if (x.rank() < 2) throw std::invalid_argument("graph_conv: expects x[..., N, C]");
  const std::size_t n = x.shape()[x.rank() - 2], cin = x.shape().back();
  const std::size_t cout = weights.front().rank() == 2 ? weights.front().dim(1) : 0;
  for (std::size_t k = 0; k < adjacencies.size(); ++k) {
    if (adjacencies[k].shape() != Shape{n, n}) {
      throw std::invalid_argument("graph_conv: adjacency " + std::to_string(k) + " is " +
                                  to_string(adjacencies[k].shape()) + ", expected [" +
                                  std::to_string(n) + "," + std::to_string(n) + "]");
    }
    if (weights[k].shape() != Shape{cin, cout}) {
      throw std::invalid_argument("graph_conv: weight " + std::to_string(k) + " has shape " +
                                  to_string(weights[k].shape()));
    }
  }
  const std::size_t slices = x.numel() / (n * cin);

  // One GEMM pair per [N, C] slice: a frame's result does not depend on the
  // rest of the batch, and the small operands stay in cache.
  const auto xv = x.values();
  std::vector<double> out(slices * n * cout, 0.0);
  std::vector<double> u(n * cin);
  const auto um = as_matrix(std::span<const double>(u), n, cin);
  for (std::size_t k = 0; k < adjacencies.size(); ++k) {
    const auto a = as_matrix(adjacencies[k].values(), n, n);
    const auto w = as_matrix(weights[k].values(), cin, cout);
    for (std::size_t sl = 0; sl < slices; ++sl) {
      as_matrix(std::span<double>(u), n, cin).noalias() = a * as_matrix(xv.subspan(sl * n * cin, n * cin), n, cin);
      as_matrix(std::span<double>(out).subspan(sl * n * cout, n * cout), n, cout).noalias() += um * w;
    }
  }

  std::vector<Tensor> inputs{x};
  inputs.insert(inputs.end(), adjacencies.begin(), adjacencies.end());
  inputs.insert(inputs.end(), weights.begin(), weights.end());
  Shape shape = x.shape();
  shape.back() = cout;
  return make_result(
      std::move(shape), std::move(out), inputs,
      [x, adjacencies, weights, n, cin, cout, slices](std::span<const double> grad) {
        const auto xv = x.values();
        const auto gm = as_matrix(grad, slices * n, cout);
        std::vector<double> buf(slices * n * cin);
        std::vector<double> du(n * cin);
        const auto dum = as_matrix(std::span<const double>(du), n, cin);
        std::span<double> dx;
        if (x.requires_grad()) dx = grad_accumulator(x);
        for (std::size_t k = 0; k < adjacencies.size(); ++k) {
          const Tensor& adj = adjacencies[k];
          const Tensor& w = weights[k];
          const auto a = as_matrix(adj.values(), n, n);
          const auto wm = as_matrix(w.values(), cin, cout);
          if (w.requires_grad()) {
            for (std::size_t sl = 0; sl < slices; ++sl) {
              as_matrix(std::span<double>(buf).subspan(sl * n * cin, n * cin), n, cin).noalias() =
                  a * as_matrix(xv.subspan(sl * n * cin, n * cin), n, cin);
            }
            as_matrix(grad_accumulator(w), cin, cout).noalias() +=
                as_matrix(std::span<const double>(buf), slices * n, cin).transpose() * gm;
          }
          if (!x.requires_grad() && !adj.requires_grad()) continue;
          std::span<double> da;
          if (adj.requires_grad()) da = grad_accumulator(adj);
          for (std::size_t sl = 0; sl < slices; ++sl) {
            as_matrix(std::span<double>(du), n, cin).noalias() =
                as_matrix(grad.subspan(sl * n * cout, n * cout), n, cout) * wm.transpose();
            if (x.requires_grad()) {
              as_matrix(dx.subspan(sl * n * cin, n * cin), n, cin).noalias() += a.transpose() * dum;
            }
            if (adj.requires_grad()) {
              as_matrix(da, n, n).noalias() +=
                  dum * as_matrix(xv.subspan(sl * n * cin, n * cin), n, cin).transpose();
            }
          }
        }
      });
}

Tensor scaled_mask_adjacency(const Tensor& base, std::span<const double> s, const Tensor& mask) {
  const std::size_t n = s.size();
  if (base.shape() != Shape{n, n} || mask.shape() != Shape{n, n}) {
    throw std::invalid_argument("scaled_mask_adjacency: expects [N,N] base and mask");
  }
  std::vector<double> out(n * n);
  const auto bv = base.values(), mv = mask.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = bv[i * n + j] + (s[i] * s[j]) * mv[i * n + j];
  }
  std::vector<double> scale_copy(s.begin(), s.end());
  return make_result(Shape{n, n}, std::move(out), {mask},
                     [mask, scale_copy, n](std::span<const double> g) {
                       if (!mask.requires_grad()) return;
                       auto acc = grad_accumulator(mask);
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t j = 0; j < n; ++j) {
                           acc[i * n + j] += (scale_copy[i] * scale_copy[j]) * g[i * n + j];
                         }
                       }
                     });
}

}  // namespace msg3d::ad
