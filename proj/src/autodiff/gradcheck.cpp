#include "msg3d/autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace msg3d::ad {

GradCheckReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor at,
                                  const GradCheckOptions& options) {
  if (!at.is_leaf()) throw std::invalid_argument("finite_diff_check: point must be a leaf");
  const bool previous = at.requires_grad();
  at.set_requires_grad(true);
  at.zero_grad();

  const Tensor loss = f(at);
  backward(loss);
  std::vector<double> analytic(at.numel(), 0.0);
  if (at.has_grad()) {
    const auto g = std::as_const(at).grad();
    std::copy(g.begin(), g.end(), analytic.begin());
  }
  at.zero_grad();
  at.set_requires_grad(previous);

  NoGradGuard no_grad;
  auto eval = [&] { return f(at).item(); };
  const double f0 = eval();
  if (eval() != f0 || f0 != loss.item()) {
    throw std::runtime_error("finite_diff_check: function is not deterministic");
  }

  GradCheckReport report;
  const std::size_t n = at.numel();
  const std::size_t count = options.max_coords ? std::min(n, options.max_coords) : n;
  auto values = at.values();
  for (std::size_t c = 0; c < count; ++c) {
    const std::size_t i = count == n ? c : c * n / count;
    const double x = values[i];
    values[i] = x + options.eps;
    const double fp = eval();
    values[i] = x - options.eps;
    const double fm = eval();
    values[i] = x;

    const double central = (fp - fm) / (2.0 * options.eps);
    const double forward = (fp - f0) / options.eps, backward_diff = (f0 - fm) / options.eps;
    if (std::abs(forward - backward_diff) >
        options.kink_tol * std::max(1.0, std::abs(central))) {
      ++report.excluded;
      continue;
    }
    const double denom = std::max({std::abs(analytic[i]), std::abs(central), options.floor});
    const double rel = std::abs(analytic[i] - central) / denom;
    ++report.checked;
    if (rel > report.max_rel_error || !std::isfinite(rel)) {
      report.max_rel_error = rel;
      report.worst_index = i;
    }
  }
  report.passed = std::isfinite(report.max_rel_error) && report.max_rel_error <= options.tol;
  return report;
}

}  // namespace msg3d::ad
